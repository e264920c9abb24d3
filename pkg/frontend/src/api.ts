// Service client: /info discovery and debounced /enhance requests with
// supersession (a response for an older request never overwrites a newer one).

export interface ModelInfo {
	r: number;
	c_model: number;
	num_blocks: number;
	variant: string;
	checkpoint_sha256: string;
	beta_lo: number;
	beta_hi: number;
}

export interface EnhanceResult {
	image: string; // base64 PNG
	mean_luminance: number;
	millis: number;
}

export async function fetchInfo(baseUrl: string): Promise<ModelInfo> {
	const resp = await fetch(`${baseUrl}/info`);
	if (!resp.ok) {
		throw new Error(`info request failed: ${resp.status}`);
	}
	return (await resp.json()) as ModelInfo;
}

export type Transport = (imageB64: string, beta: number) => Promise<EnhanceResult>;

export function httpTransport(baseUrl: string): Transport {
	return async (imageB64, beta) => {
		const resp = await fetch(`${baseUrl}/enhance`, {
			method: "POST",
			headers: { "Content-Type": "application/json" },
			body: JSON.stringify({ image: imageB64, beta: String(beta) }),
		});
		if (!resp.ok) {
			const body = await resp.json().catch(() => ({}));
			throw new Error(body.error_id ? `server error ${body.error_id}` : `HTTP ${resp.status}`);
		}
		return (await resp.json()) as EnhanceResult;
	};
}

export interface EnhancerOptions {
	debounceMs?: number;
	onResult: (result: EnhanceResult, beta: number) => void;
	onError?: (err: Error) => void;
	// injectable timers so tests can drive time
	setTimer?: (fn: () => void, ms: number) => unknown;
	clearTimer?: (handle: unknown) => void;
}

// Debounced single-flight requester. Slider movement calls request() freely;
// a transport call is issued only after the input settles, at most one is in
// flight, and only the newest response id may update the UI.
export class DebouncedEnhancer {
	requestsIssued = 0;

	private transport: Transport;
	private debounceMs: number;
	private onResult: (result: EnhanceResult, beta: number) => void;
	private onError: (err: Error) => void;
	private setTimer: (fn: () => void, ms: number) => unknown;
	private clearTimer: (handle: unknown) => void;

	private pending: { image: string; beta: number } | null = null;
	private timerHandle: unknown = null;
	private inFlight = false;
	private nextId = 0;
	private newestDelivered = 0;

	constructor(transport: Transport, opts: EnhancerOptions) {
		this.transport = transport;
		this.debounceMs = opts.debounceMs ?? 150;
		this.onResult = opts.onResult;
		this.onError = opts.onError ?? (() => undefined);
		this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
		this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h as number));
	}

	request(image: string, beta: number): void {
		this.pending = { image, beta };
		if (this.timerHandle !== null) {
			this.clearTimer(this.timerHandle);
		}
		this.timerHandle = this.setTimer(() => {
			this.timerHandle = null;
			this.fire();
		}, this.debounceMs);
	}

	get busy(): boolean {
		return this.inFlight;
	}

	private fire(): void {
		if (this.inFlight || this.pending === null) {
			return; // the in-flight completion re-fires for the queued value
		}
		const { image, beta } = this.pending;
		this.pending = null;
		this.inFlight = true;
		this.requestsIssued += 1;
		const id = ++this.nextId;
		this.transport(image, beta).then(
			(result) => this.settle(id, () => {
				if (id > this.newestDelivered) {
					this.newestDelivered = id;
					this.onResult(result, beta);
				}
			}),
			(err) => this.settle(id, () => this.onError(err as Error)),
		);
	}

	private settle(id: number, deliver: () => void): void {
		this.inFlight = false;
		deliver();
		if (this.pending !== null) {
			this.fire(); // a newer value arrived while we were in flight
		}
	}
}
