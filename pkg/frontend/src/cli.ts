#!/usr/bin/env node
/** vlaforge-client replay --addr ws://host:port --trace trace.bin */

import { ClientSession } from "./client.js";
import { loadTrace, replayEval } from "./replay.js";

function parseArgs(argv: string[]): { command: string; flags: Map<string, string> } {
  const [command, ...rest] = argv;
  const flags = new Map<string, string>();
  for (let i = 0; i < rest.length; i += 2) {
    if (!rest[i].startsWith("--") || i + 1 >= rest.length) {
      throw new Error(`bad flag pair near ${rest[i]}`);
    }
    flags.set(rest[i].slice(2), rest[i + 1]);
  }
  return { command, flags };
}

async function main(): Promise<number> {
  const { command, flags } = parseArgs(process.argv.slice(2));
  if (command !== "replay") {
    console.error("usage: vlaforge-client replay --addr ws://host:port --trace file");
    return 2;
  }
  const addr = flags.get("addr");
  const trace = flags.get("trace");
  if (!addr || !trace) {
    console.error("replay needs --addr and --trace");
    return 2;
  }
  const session = new ClientSession(addr);
  try {
    const report = await replayEval(session, loadTrace(trace));
    console.log(
      `replayed ${report.steps} steps, max |deviation| = ${report.maxAbsDeviation}` +
        (report.mismatchedSteps.length
          ? `, mismatched: ${report.mismatchedSteps.join(",")}`
          : ""),
    );
    console.log(report.pass ? "PASS" : "FAIL");
    return report.pass ? 0 : 1;
  } finally {
    session.close();
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err));
    process.exit(1);
  },
);
