/**
 * Framed request/response protocol (big-endian, over stdio).
 *
 * Request:  "WSST" | version u32=1 | kind u8 (1=SEGMENT, 2=CLEAN) | tile_id u64
 *           | width u32 | height u32 | payload w*h*3 RGB bytes
 * Response: "WSST" | version u32=1 | status u8 (0=OK, 1=ERROR) | tile_id u64
 *           | payload (SEGMENT: w*h labels; CLEAN: w*h*3 RGB;
 *                      ERROR: u32 length + UTF-8 message)
 */

export const MAGIC = Buffer.from("WSST", "ascii");
export const VERSION = 1;
export const KIND_SEGMENT = 1;
export const KIND_CLEAN = 2;
export const STATUS_OK = 0;
export const STATUS_ERROR = 1;

export const REQUEST_HEADER_SIZE = 4 + 4 + 1 + 8 + 4 + 4;
export const RESPONSE_HEADER_SIZE = 4 + 4 + 1 + 8;

// refuse absurd payloads instead of buffering forever
export const MAX_PAYLOAD = 1 << 30;

export interface Request {
  kind: number;
  tileId: bigint;
  width: number;
  height: number;
  payload: Buffer;
}

export type ParseEvent =
  | { type: "request"; request: Request }
  | { type: "bad-frame"; reason: string; tileId: bigint };

export function encodeResponseOk(tileId: bigint, payload: Buffer): Buffer {
  const header = Buffer.alloc(RESPONSE_HEADER_SIZE);
  MAGIC.copy(header, 0);
  header.writeUInt32BE(VERSION, 4);
  header.writeUInt8(STATUS_OK, 8);
  header.writeBigUInt64BE(tileId, 9);
  return Buffer.concat([header, payload]);
}

export function encodeResponseError(tileId: bigint, message: string): Buffer {
  const text = Buffer.from(message, "utf-8");
  const frame = Buffer.alloc(RESPONSE_HEADER_SIZE + 4 + text.length);
  MAGIC.copy(frame, 0);
  frame.writeUInt32BE(VERSION, 4);
  frame.writeUInt8(STATUS_ERROR, 8);
  frame.writeBigUInt64BE(tileId, 9);
  frame.writeUInt32BE(text.length, RESPONSE_HEADER_SIZE);
  text.copy(frame, RESPONSE_HEADER_SIZE + 4);
  return frame;
}

export function encodeRequest(
  kind: number,
  tileId: bigint,
  width: number,
  height: number,
  payload: Buffer,
): Buffer {
  const header = Buffer.alloc(REQUEST_HEADER_SIZE);
  MAGIC.copy(header, 0);
  header.writeUInt32BE(VERSION, 4);
  header.writeUInt8(kind, 8);
  header.writeBigUInt64BE(tileId, 9);
  header.writeUInt32BE(width, 17);
  header.writeUInt32BE(height, 21);
  return Buffer.concat([header, payload]);
}

/**
 * Incremental frame parser. Feed arbitrary chunks; it emits complete
 * requests and bad-frame events. After a malformed header it resynchronizes
 * by scanning for the next magic, so one garbage burst costs one error
 * event rather than the whole session.
 */
export class FrameParser {
  private buf: Buffer = Buffer.alloc(0);

  feed(chunk: Buffer): ParseEvent[] {
    this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
    const events: ParseEvent[] = [];
    for (;;) {
      if (this.buf.length < REQUEST_HEADER_SIZE) break;
      if (!this.buf.subarray(0, 4).equals(MAGIC)) {
        events.push({ type: "bad-frame", reason: "bad magic", tileId: 0n });
        this.resync();
        continue;
      }
      const version = this.buf.readUInt32BE(4);
      const kind = this.buf.readUInt8(8);
      const tileId = this.buf.readBigUInt64BE(9);
      const width = this.buf.readUInt32BE(17);
      const height = this.buf.readUInt32BE(21);
      let reason: string | null = null;
      if (version !== VERSION) reason = `unsupported version ${version}`;
      else if (kind !== KIND_SEGMENT && kind !== KIND_CLEAN)
        reason = `unknown kind ${kind}`;
      else if (width === 0 || height === 0) reason = "empty tile dimensions";
      else if (width * height * 3 > MAX_PAYLOAD) reason = "payload too large";
      if (reason !== null) {
        events.push({ type: "bad-frame", reason, tileId });
        this.resync();
        continue;
      }
      const payloadLen = width * height * 3;
      if (this.buf.length < REQUEST_HEADER_SIZE + payloadLen) break;
      const payload = Buffer.from(
        this.buf.subarray(REQUEST_HEADER_SIZE, REQUEST_HEADER_SIZE + payloadLen),
      );
      this.buf = this.buf.subarray(REQUEST_HEADER_SIZE + payloadLen);
      events.push({
        type: "request",
        request: { kind, tileId, width, height, payload },
      });
    }
    return events;
  }

  /** Drop bytes up to the next magic occurrence, or everything when none is
   * buffered (a magic split across garbage chunks is not recovered; valid
   * streams never take this path). */
  private resync(): void {
    const next = this.buf.indexOf(MAGIC, 1);
    this.buf = next === -1 ? Buffer.alloc(0) : this.buf.subarray(next);
  }

  get pendingBytes(): number {
    return this.buf.length;
  }
}
