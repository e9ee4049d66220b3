import assert from "node:assert/strict";
import { readFileSync } from "node:fs";
import path from "node:path";
import { fileURLToPath } from "node:url";
import { test } from "node:test";

import { decodeResponse, actionsFromResponse, canonicalObservation, encodePredictRequest } from "../src/wire.js";

// committed by the native side under <repo>/tests/fixtures/
const repoRoot = path.resolve(path.dirname(fileURLToPath(import.meta.url)), "..", "..", "..");
const fixtures = path.join(repoRoot, "tests", "fixtures");

test("canonical request bytes equal the native golden fixture", () => {
  const committed = new Uint8Array(readFileSync(path.join(fixtures, "golden_request.bin")));
  const obs = canonicalObservation();
  const fresh = encodePredictRequest("golden-1", obs.image, obs.lang, obs.state, 7);
  assert.equal(fresh.length, committed.length);
  assert.deepEqual(fresh, committed);
});

test("golden response decodes to the expected k x 32 array", () => {
  const doc = decodeResponse(
    new Uint8Array(readFileSync(path.join(fixtures, "golden_response.bin"))),
  );
  assert.equal(doc.status, "ok");
  assert.equal(doc.request_id, "golden-1");
  const actions = actionsFromResponse(doc);
  assert.equal(actions.length, 2);
  for (let r = 0; r < 2; r++) {
    assert.equal(actions[r].length, 32);
    for (let c = 0; c < 32; c++) {
      assert.equal(actions[r][c], r + c / 128);
    }
  }
  assert.equal(doc.body["server_ms"], 1.5);
});
