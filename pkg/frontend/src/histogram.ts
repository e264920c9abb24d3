// 64-bin luminance histogram of RGBA pixel data, plus a canvas renderer with
// markers for the requested control value and the achieved mean.

export const BINS = 64;

export function lumaHistogram(rgba: Uint8ClampedArray | number[], bins = BINS): number[] {
	const hist = new Array<number>(bins).fill(0);
	let total = 0;
	for (let i = 0; i + 2 < rgba.length; i += 4) {
		const y = (0.299 * rgba[i] + 0.587 * rgba[i + 1] + 0.114 * rgba[i + 2]) / 255;
		const bin = Math.min(Math.floor(y * bins), bins - 1);
		hist[bin] += 1;
		total += 1;
	}
	if (total > 0) {
		for (let b = 0; b < bins; b++) {
			hist[b] /= total;
		}
	}
	return hist;
}

export function histogramSum(hist: number[]): number {
	return hist.reduce((acc, v) => acc + v, 0);
}

export interface HistogramMarkers {
	requestedBeta?: number;
	achievedMean?: number;
}

export function drawHistogram(
	canvas: HTMLCanvasElement,
	hist: number[],
	markers: HistogramMarkers = {},
): void {
	const ctx = canvas.getContext("2d");
	if (!ctx) {
		return;
	}
	const { width, height } = canvas;
	ctx.clearRect(0, 0, width, height);
	ctx.fillStyle = "#10141c";
	ctx.fillRect(0, 0, width, height);

	const peak = Math.max(...hist, 1e-9);
	const barW = width / hist.length;
	ctx.fillStyle = "#5fa8ff";
	hist.forEach((v, i) => {
		const h = (v / peak) * (height - 4);
		ctx.fillRect(i * barW, height - h, Math.max(barW - 1, 1), h);
	});

	const marker = (x01: number, color: string) => {
		ctx.strokeStyle = color;
		ctx.lineWidth = 2;
		ctx.beginPath();
		const x = Math.round(x01 * width) + 0.5;
		ctx.moveTo(x, 0);
		ctx.lineTo(x, height);
		ctx.stroke();
	};
	if (markers.requestedBeta !== undefined) {
		marker(markers.requestedBeta, "#ffb74d");
	}
	if (markers.achievedMean !== undefined) {
		marker(markers.achievedMean, "#69f0ae");
	}
}

export function markerPosition(value01: number, width: number): number {
	return Math.round(value01 * width);
}
