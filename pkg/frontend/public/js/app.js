// Console wiring: source image selection, control slider, live preview,
// achieved-mean readout, latency badge and luminance histogram.
import { DebouncedEnhancer, fetchInfo, httpTransport } from "./api.js";
import { drawHistogram, lumaHistogram } from "./histogram.js";
import { boundsFromInfo, createSlider } from "./slider.js";
function el(id) {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node;
}
function drawSampleScene(canvas, seed) {
    // procedural dark sample so the console works without uploads
    const ctx = canvas.getContext("2d");
    const { width: w, height: h } = canvas;
    let state = seed >>> 0 || 1;
    const rnd = () => {
        state = (state * 1664525 + 1013904223) >>> 0;
        return state / 2 ** 32;
    };
    const grad = ctx.createLinearGradient(0, 0, w, h);
    grad.addColorStop(0, "#05070d");
    grad.addColorStop(1, "#16202e");
    ctx.fillStyle = grad;
    ctx.fillRect(0, 0, w, h);
    for (let i = 0; i < 9; i++) {
        const r = 30 + rnd() * 50;
        const g = 18 + rnd() * 40;
        const b = 14 + rnd() * 36;
        ctx.fillStyle = `rgb(${r | 0},${g | 0},${b | 0})`;
        if (rnd() < 0.5) {
            ctx.fillRect(rnd() * w, rnd() * h, rnd() * w * 0.5, rnd() * h * 0.5);
        }
        else {
            ctx.beginPath();
            ctx.arc(rnd() * w, rnd() * h, rnd() * w * 0.2, 0, Math.PI * 2);
            ctx.fill();
        }
    }
}
async function readImageData(src) {
    const img = new Image();
    img.src = src;
    await img.decode();
    const canvas = document.createElement("canvas");
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    const ctx = canvas.getContext("2d");
    ctx.drawImage(img, 0, 0);
    return ctx.getImageData(0, 0, canvas.width, canvas.height);
}
export async function startApp() {
    const state = { sourceB64: null, beta: 0.5, last: null };
    const baseUrlInput = el("service-url");
    const banner = el("retry-banner");
    const toast = el("toast");
    const preview = el("preview");
    const source = el("source");
    const meanReadout = el("mean-readout");
    const latencyBadge = el("latency-badge");
    const histCanvas = el("histogram");
    let enhancer = null;
    const showToast = (message) => {
        toast.textContent = message;
        toast.classList.add("visible");
        setTimeout(() => toast.classList.remove("visible"), 4000);
    };
    const slider = createSlider("target luminance", (value) => {
        state.beta = value;
        if (state.sourceB64 && enhancer) {
            enhancer.request(state.sourceB64, value);
        }
    });
    el("controls").append(slider.element);
    const onResult = async (result, beta) => {
        state.last = result;
        preview.src = `data:image/png;base64,${result.image}`;
        meanReadout.textContent = result.mean_luminance.toFixed(4);
        latencyBadge.textContent = `${result.millis} ms`;
        const data = await readImageData(preview.src);
        drawHistogram(histCanvas, lumaHistogram(data.data), {
            requestedBeta: beta,
            achievedMean: result.mean_luminance,
        });
    };
    const connect = async () => {
        const baseUrl = baseUrlInput.value.replace(/\/$/, "");
        try {
            const info = await fetchInfo(baseUrl);
            slider.setBounds(boundsFromInfo(info));
            el("model-desc").textContent =
                `${info.variant} r=${info.r} c=${info.c_model} n=${info.num_blocks} ` +
                    `ckpt ${info.checkpoint_sha256.slice(0, 10)}`;
            banner.classList.remove("visible");
            enhancer = new DebouncedEnhancer(httpTransport(baseUrl), {
                onResult,
                onError: (err) => showToast(err.message),
            });
            if (state.sourceB64) {
                enhancer.request(state.sourceB64, slider.value());
            }
        }
        catch {
            banner.classList.add("visible");
        }
    };
    el("retry-btn").addEventListener("click", connect);
    const setSource = (b64) => {
        state.sourceB64 = b64;
        source.src = `data:image/png;base64,${b64}`;
        if (enhancer) {
            enhancer.request(b64, slider.value());
        }
    };
    el("sample-btn").addEventListener("click", () => {
        const canvas = document.createElement("canvas");
        canvas.width = 96;
        canvas.height = 96;
        drawSampleScene(canvas, Math.floor(Math.random() * 1e9));
        setSource(canvas.toDataURL("image/png").split(",")[1]);
    });
    el("upload").addEventListener("change", (event) => {
        const file = event.target.files?.[0];
        if (!file) {
            return;
        }
        const reader = new FileReader();
        reader.onload = () => {
            const url = reader.result;
            setSource(url.split(",")[1]);
        };
        reader.readAsDataURL(file);
    });
    await connect();
}
startApp();
