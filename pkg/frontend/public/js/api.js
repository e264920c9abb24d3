// Service client: /info discovery and debounced /enhance requests with
// supersession (a response for an older request never overwrites a newer one).
export async function fetchInfo(baseUrl) {
    const resp = await fetch(`${baseUrl}/info`);
    if (!resp.ok) {
        throw new Error(`info request failed: ${resp.status}`);
    }
    return (await resp.json());
}
export function httpTransport(baseUrl) {
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
        return (await resp.json());
    };
}
// Debounced single-flight requester. Slider movement calls request() freely;
// a transport call is issued only after the input settles, at most one is in
// flight, and only the newest response id may update the UI.
export class DebouncedEnhancer {
    constructor(transport, opts) {
        this.requestsIssued = 0;
        this.pending = null;
        this.timerHandle = null;
        this.inFlight = false;
        this.nextId = 0;
        this.newestDelivered = 0;
        this.transport = transport;
        this.debounceMs = opts.debounceMs ?? 150;
        this.onResult = opts.onResult;
        this.onError = opts.onError ?? (() => undefined);
        this.setTimer = opts.setTimer ?? ((fn, ms) => setTimeout(fn, ms));
        this.clearTimer = opts.clearTimer ?? ((h) => clearTimeout(h));
    }
    request(image, beta) {
        this.pending = { image, beta };
        if (this.timerHandle !== null) {
            this.clearTimer(this.timerHandle);
        }
        this.timerHandle = this.setTimer(() => {
            this.timerHandle = null;
            this.fire();
        }, this.debounceMs);
    }
    get busy() {
        return this.inFlight;
    }
    fire() {
        if (this.inFlight || this.pending === null) {
            return; // the in-flight completion re-fires for the queued value
        }
        const { image, beta } = this.pending;
        this.pending = null;
        this.inFlight = true;
        this.requestsIssued += 1;
        const id = ++this.nextId;
        this.transport(image, beta).then((result) => this.settle(id, () => {
            if (id > this.newestDelivered) {
                this.newestDelivered = id;
                this.onResult(result, beta);
            }
        }), (err) => this.settle(id, () => this.onError(err)));
    }
    settle(id, deliver) {
        this.inFlight = false;
        deliver();
        if (this.pending !== null) {
            this.fire(); // a newer value arrived while we were in flight
        }
    }
}
