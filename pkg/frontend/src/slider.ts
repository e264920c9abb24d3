// Luminance-control slider bound to the range advertised by the service.

export interface SliderBounds {
	min: number;
	max: number;
	step: number;
}

export function boundsFromInfo(info: { beta_lo: number; beta_hi: number }, steps = 200): SliderBounds {
	const lo = Math.max(0, Math.min(info.beta_lo, info.beta_hi));
	const hi = Math.min(1, Math.max(info.beta_lo, info.beta_hi));
	const span = Math.max(hi - lo, 1e-6);
	return { min: lo, max: hi, step: span / steps };
}

export interface SliderHandle {
	element: HTMLElement;
	input: HTMLInputElement;
	setBounds(bounds: SliderBounds): void;
	value(): number;
}

export function createSlider(label: string, onInput: (value: number) => void): SliderHandle {
	const wrap = document.createElement("label");
	wrap.className = "slider-row";

	const title = document.createElement("span");
	title.textContent = label;

	const readout = document.createElement("span");
	readout.className = "mono";

	const input = document.createElement("input");
	input.type = "range";
	input.min = "0";
	input.max = "1";
	input.step = "0.005";
	input.value = "0.5";
	readout.textContent = input.value;

	input.addEventListener("input", () => {
		readout.textContent = Number(input.value).toFixed(3);
		onInput(Number(input.value));
	});

	wrap.append(title, input, readout);
	return {
		element: wrap,
		input,
		setBounds(bounds: SliderBounds) {
			input.min = String(bounds.min);
			input.max = String(bounds.max);
			input.step = String(bounds.step);
			const mid = (bounds.min + bounds.max) / 2;
			input.value = String(mid);
			readout.textContent = mid.toFixed(3);
		},
		value() {
			return Number(input.value);
		},
	};
}
