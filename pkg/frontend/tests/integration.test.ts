// Live-service integration: runs only when CLERWKV_SERVER points at a
// running inference service (ideally with a trained checkpoint).

import { describe, expect, it } from "vitest";
import { DebouncedEnhancer, fetchInfo, httpTransport } from "../src/api";

const server = process.env.CLERWKV_SERVER;

// 16x16 dark noise PNG
const TINY_PNG_B64 =
	"iVBORw0KGgoAAAANSUhEUgAAABAAAAAQCAIAAACQkWg2AAACn0lEQVR4nAXB2XaiSAAA0KKKYglLKYIirumTztrJmXnox/n/55lxEqdjEgm4RAVEdoul72UeLXU5fBxTr43dcv797T7jd+tMnvRPmkb8MFxDXow70yKwlRgRKkN3dC2h2cmhxSf6EpaGw5+tdlOTbLRxK01lpwkwyzwZf+ntS6++bkPEc+ODaN5kkfToDQdu9320G9XSjK5M3vtVxcsEJUa2W11Rxh5E5xeoVDNQTuZuymXxky0zgXEyc9m5HbDLLqqa8eBbW4THXKFfzpBp3juQe/4jOlR/SsrWWPsmZrjW8fPVyLagHsWT6uWXdNw7GRqnyTQMPImYTPevn6RIRbwSV4qgCw4+qPTKYxzotaLGnfb4un7gD4Bnk6rBSUrZzmy/0aGGkUr6NJ2T5jZVROZD0FUYE+IClbD/AsrmlaBk4lvTgbKZ97eEIHO2i9fGo8OcD+vTUMwRT7mPk/5ueF9ka5gwZPbyVrxZsEgR6F2tVvhhtMr+yQFnhYmN1ckr4IZPWCnSVlJ7a961Liwx7q56MI815B/sCrwK/eQaYTifPmjL1ukmnQvlap6CcBc3Y4fWvs1cJWcfBiDJRL19LPWlz8QcbT2EwLa08G/MYPBknBFC91VNuEhn/z9obQQ1anYvdvs0LXOzHVJJ+K+gfWbDk6i3qN9YmMjlPFgwjeVIvWR/qFmpsoPMqHSWgI95dNcRa3PPf/bCMFMvs5aDbVbpAIAlKsVqVw0ATCMSKVjUFnYw6fILMk9gLRJaEj9N+f21jLKC+eELrMPLGw/cp1Aq7GPktgqCzMjzLHyrfCQ7JWd7qF8zebHpipfJfsCCK2FkTq3cZ5/HF9qmr9Zx+q3qm/IOB3BYhEW5GuU4l7OOcvkiexfnzsmD4zh7vvsNmUFw5Xp/iD4AAAAASUVORK5CYII=";

describe.skipIf(!server)("against a live service", () => {
	it("advertises a control range and answers /enhance", async () => {
		const info = await fetchInfo(server!);
		expect(info.beta_hi).toBeGreaterThanOrEqual(info.beta_lo);
		const transport = httpTransport(server!);
		const result = await transport(TINY_PNG_B64, (info.beta_lo + info.beta_hi) / 2);
		expect(result.mean_luminance).toBeGreaterThanOrEqual(0);
		expect(result.mean_luminance).toBeLessThanOrEqual(1);
	});

	it("slider sweep produces a non-decreasing achieved mean", async () => {
		const info = await fetchInfo(server!);
		const transport = httpTransport(server!);
		const means: number[] = [];
		const points = 8;
		for (let i = 0; i < points; i++) {
			const beta = info.beta_lo + (i / (points - 1)) * (info.beta_hi - info.beta_lo);
			const result = await transport(TINY_PNG_B64, beta);
			means.push(result.mean_luminance);
		}
		for (let i = 1; i < means.length; i++) {
			expect(means[i]).toBeGreaterThanOrEqual(means[i - 1] - 0.01);
		}
	});

	it("debounced dragging settles on the final slider value", async () => {
		const info = await fetchInfo(server!);
		const enhancer = new DebouncedEnhancer(httpTransport(server!), {
			debounceMs: 150,
			onResult: (result, beta) => {
				finalBeta = beta;
				finalMean = result.mean_luminance;
			},
		});
		let finalBeta = -1;
		let finalMean = -1;
		for (let i = 0; i <= 20; i++) {
			enhancer.request(TINY_PNG_B64, info.beta_lo + (i / 20) * (info.beta_hi - info.beta_lo));
			await new Promise((r) => setTimeout(r, 15));
		}
		await new Promise((r) => setTimeout(r, 1500));
		expect(enhancer.requestsIssued).toBeLessThanOrEqual(4);
		expect(finalBeta).toBeCloseTo(info.beta_hi, 6);
		expect(finalMean).toBeGreaterThanOrEqual(0);
	});
});
