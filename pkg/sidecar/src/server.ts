/**
 * Request loop: read frames from a stream, answer each with exactly one
 * response frame in request order. Malformed frames get an ERROR frame and
 * the parser resynchronizes; handler exceptions get an ERROR frame with the
 * request's tile_id. EOF ends the loop cleanly.
 */

import type { Readable, Writable } from "node:stream";
import type { Handler } from "./heuristic.js";
import {
  FrameParser,
  KIND_SEGMENT,
  encodeResponseError,
  encodeResponseOk,
} from "./protocol.js";

export async function serve(
  handler: Handler,
  input: Readable,
  output: Writable,
): Promise<void> {
  const parser = new FrameParser();

  const write = (frame: Buffer): Promise<void> =>
    new Promise((resolve, reject) => {
      output.write(frame, (err) => (err ? reject(err) : resolve()));
    });

  for await (const chunk of input) {
    for (const event of parser.feed(chunk as Buffer)) {
      if (event.type === "bad-frame") {
        await write(encodeResponseError(event.tileId, event.reason));
        continue;
      }
      const { kind, tileId, width, height, payload } = event.request;
      try {
        const result =
          kind === KIND_SEGMENT
            ? handler.segment(payload, width, height)
            : handler.clean(payload, width, height);
        const expected = kind === KIND_SEGMENT ? width * height : width * height * 3;
        if (result.length !== expected) {
          await write(encodeResponseError(
            tileId, `handler returned ${result.length} bytes, expected ${expected}`));
          continue;
        }
        await write(encodeResponseOk(tileId, result));
      } catch (err) {
        await write(encodeResponseError(tileId, String(err)));
      }
    }
  }
}
