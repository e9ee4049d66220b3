/**
 * Synchronous-style benchmark client: one in-flight request per session.
 * Error envelopes surface as ServerError carrying the server's code, so the
 * exception taxonomy maps one-to-one onto the wire contract.
 */

import WebSocket from "ws";

import * as wire from "./wire.js";

export class ServerError extends Error {
  constructor(
    public readonly code: string,
    message: string,
  ) {
    super(`${code}: ${message}`);
  }
}

export class TransportError extends Error {}

export class ClientSession {
  private ws: WebSocket | null = null;
  private counter = 0;
  private busy = false;

  constructor(
    public readonly addr: string,
    public readonly defaultSeed = 0,
    public readonly timeoutMs = 30_000,
  ) {}

  async connect(): Promise<void> {
    if (this.ws) return;
    const ws = new WebSocket(this.addr);
    ws.binaryType = "nodebuffer";
    await new Promise<void>((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new TransportError(`connect timeout to ${this.addr}`)),
        this.timeoutMs,
      );
      ws.once("open", () => {
        clearTimeout(timer);
        resolve();
      });
      ws.once("error", (err) => {
        clearTimeout(timer);
        reject(new TransportError(String(err)));
      });
    });
    this.ws = ws;
  }

  close(): void {
    this.ws?.close();
    this.ws = null;
  }

  private async roundTrip(data: Uint8Array): Promise<wire.ResponseEnvelope> {
    if (this.busy) {
      throw new TransportError("session allows one in-flight request");
    }
    this.busy = true;
    try {
      await this.connect();
      const ws = this.ws!;
      return await new Promise<wire.ResponseEnvelope>((resolve, reject) => {
        const timer = setTimeout(
          () => reject(new TransportError("response timeout")),
          this.timeoutMs,
        );
        const onMessage = (raw: WebSocket.RawData) => {
          clearTimeout(timer);
          cleanup();
          try {
            const bytes = raw instanceof Buffer ? new Uint8Array(raw) : new Uint8Array(raw as ArrayBuffer);
            resolve(wire.decodeResponse(bytes));
          } catch (e) {
            reject(e);
          }
        };
        const onClose = () => {
          clearTimeout(timer);
          cleanup();
          reject(new TransportError("connection closed mid-request"));
        };
        const cleanup = () => {
          ws.off("message", onMessage);
          ws.off("close", onClose);
          ws.off("error", onClose);
        };
        ws.on("message", onMessage);
        ws.once("close", onClose);
        ws.once("error", onClose);
        ws.send(data);
      });
    } finally {
      this.busy = false;
    }
  }

  private static check(doc: wire.ResponseEnvelope): wire.ResponseEnvelope {
    if (doc.status === "error") {
      const body = doc.body as { code?: string; message?: string };
      throw new ServerError(body.code ?? "unknown", body.message ?? "");
    }
    return doc;
  }

  async predict(
    image: wire.ImageMap,
    lang: string,
    state: number[] | null = null,
    seed?: number,
  ): Promise<number[][]> {
    this.counter += 1;
    const data = wire.encodePredictRequest(
      `ts${this.counter}`,
      image,
      lang,
      state,
      seed ?? this.defaultSeed,
    );
    const doc = ClientSession.check(await this.roundTrip(data));
    return wire.actionsFromResponse(doc);
  }

  async health(): Promise<Record<string, unknown>> {
    this.counter += 1;
    const doc = ClientSession.check(
      await this.roundTrip(wire.encodeRequest("health", `ts${this.counter}`, {})),
    );
    return doc.body;
  }

  async info(): Promise<Record<string, unknown>> {
    this.counter += 1;
    const doc = ClientSession.check(
      await this.roundTrip(wire.encodeRequest("info", `ts${this.counter}`, {})),
    );
    return doc.body;
  }
}
