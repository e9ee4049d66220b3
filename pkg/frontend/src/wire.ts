/**
 * Request/response schema for the policy server. Map keys are built in the
 * exact canonical order (kind, request_id, payload; image, lang, state, seed)
 * so encoded requests are byte-identical to the native client's.
 */

import { F64, packb, unpackb, FormatError } from "./mpack.js";

export interface ViewImage {
  h: number;
  w: number;
  rgb: Uint8Array;
}

export type ImageMap = { [view: string]: ViewImage };

export function predictPayload(
  image: ImageMap,
  lang: string,
  state: number[] | null,
  seed: number,
): Record<string, unknown> {
  const payload: Record<string, unknown> = {
    image: Object.fromEntries(
      Object.entries(image).map(([name, v]) => [
        name,
        { h: v.h, w: v.w, rgb: v.rgb },
      ]),
    ),
    lang,
  };
  if (state !== null) {
    payload["state"] = state.map((x) => new F64(x));
  }
  payload["seed"] = seed;
  return payload;
}

export function encodeRequest(
  kind: string,
  requestId: string,
  payload: Record<string, unknown>,
): Uint8Array {
  return packb({ kind, request_id: requestId, payload } as never);
}

export function encodePredictRequest(
  requestId: string,
  image: ImageMap,
  lang: string,
  state: number[] | null,
  seed: number,
): Uint8Array {
  return encodeRequest("predict", requestId, predictPayload(image, lang, state, seed));
}

export interface ResponseEnvelope {
  request_id: string;
  status: "ok" | "error";
  body: Record<string, unknown>;
}

export function decodeResponse(data: Uint8Array): ResponseEnvelope {
  const doc = unpackb(data);
  if (typeof doc !== "object" || doc === null || !("status" in doc)) {
    throw new FormatError("response is not an envelope");
  }
  return doc as unknown as ResponseEnvelope;
}

export function actionsFromResponse(doc: ResponseEnvelope): number[][] {
  const rows = doc.body["normalized_actions"];
  if (!Array.isArray(rows)) {
    throw new FormatError("response body has no normalized_actions");
  }
  return rows as number[][];
}

/**
 * The fixed 64x64 observation used by cross-language fixtures: a channel
 * gradient plus two blobs, instruction "reach red", state [0.25, 0.75].
 */
export function canonicalObservation(): {
  image: ImageMap;
  lang: string;
  state: number[];
} {
  const h = 64;
  const w = 64;
  const rgb = new Uint8Array(h * w * 3);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      const base = (y * w + x) * 3;
      rgb[base] = (x * 4) % 256;
      rgb[base + 1] = (y * 4) % 256;
      rgb[base + 2] = 0;
    }
  }
  const paint = (y0: number, x0: number, color: [number, number, number]) => {
    for (let y = y0; y < y0 + 5; y++) {
      for (let x = x0; x < x0 + 5; x++) {
        const base = (y * w + x) * 3;
        rgb[base] = color[0];
        rgb[base + 1] = color[1];
        rgb[base + 2] = color[2];
      }
    }
  };
  paint(10, 20, [255, 40, 40]);
  paint(40, 50, [255, 255, 255]);
  return {
    image: { main: { h, w, rgb } },
    lang: "reach red",
    state: [0.25, 0.75],
  };
}
