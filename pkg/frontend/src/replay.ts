/**
 * Replay a native evaluation trace against a live policy server and report
 * the per-step deviation. Passing means every returned action matrix equals
 * the recorded one bit-for-bit (doubles survive the wire exactly).
 */

import { readFileSync } from "node:fs";

import { ClientSession } from "./client.js";
import { FormatError, unpackb } from "./mpack.js";
import type { ImageMap } from "./wire.js";

export interface TraceRecord {
  image: ImageMap;
  lang: string;
  state: number[] | null;
  seed: number;
  normalized_actions: number[][];
}

export interface ReplayReport {
  steps: number;
  maxAbsDeviation: number;
  mismatchedSteps: number[];
  pass: boolean;
}

export function loadTrace(path: string): TraceRecord[] {
  let doc: unknown;
  try {
    doc = unpackb(new Uint8Array(readFileSync(path)));
  } catch (e) {
    throw new FormatError(`unreadable trace ${path}: ${e}`);
  }
  const records = (doc as { records?: unknown }).records;
  if (!Array.isArray(records)) {
    throw new FormatError("trace has no records array");
  }
  return records.map((rec, i) => {
    const r = rec as Record<string, unknown>;
    if (!r["image"] || typeof r["lang"] !== "string" || !Array.isArray(r["normalized_actions"])) {
      throw new FormatError(`trace record ${i} is malformed`);
    }
    return {
      image: r["image"] as ImageMap,
      lang: r["lang"] as string,
      state: (r["state"] as number[] | null) ?? null,
      seed: Number(r["seed"] ?? 0),
      normalized_actions: r["normalized_actions"] as number[][],
    };
  });
}

export async function replayEval(
  session: ClientSession,
  records: TraceRecord[],
): Promise<ReplayReport> {
  let maxDev = 0;
  const mismatched: number[] = [];
  for (let i = 0; i < records.length; i++) {
    const rec = records[i];
    const actions = await session.predict(rec.image, rec.lang, rec.state, rec.seed);
    let stepDev = 0;
    const expected = rec.normalized_actions;
    if (actions.length !== expected.length) {
      stepDev = Infinity;
    } else {
      for (let r = 0; r < actions.length; r++) {
        for (let c = 0; c < actions[r].length; c++) {
          stepDev = Math.max(stepDev, Math.abs(actions[r][c] - expected[r][c]));
        }
      }
    }
    if (stepDev > 0) mismatched.push(i);
    maxDev = Math.max(maxDev, stepDev);
  }
  return {
    steps: records.length,
    maxAbsDeviation: maxDev,
    mismatchedSteps: mismatched,
    pass: maxDev === 0,
  };
}
