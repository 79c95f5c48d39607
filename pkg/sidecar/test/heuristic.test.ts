import { describe, expect, it } from "vitest";
import { cleanTile, segmentTile } from "../src/heuristic.js";

function flatTile(w: number, h: number, rgb: [number, number, number]): Buffer {
  const buf = Buffer.alloc(w * h * 3);
  for (let i = 0; i < w * h; i++) {
    buf[i * 3] = rgb[0];
    buf[i * 3 + 1] = rgb[1];
    buf[i * 3 + 2] = rgb[2];
  }
  return buf;
}

function noisyTissue(w: number, h: number, seed = 1): Buffer {
  let s = seed;
  const rand = () => {
    s = (s * 1103515245 + 12345) & 0x7fffffff;
    return s;
  };
  const buf = Buffer.alloc(w * h * 3);
  for (let i = 0; i < w * h; i++) {
    buf[i * 3] = 198 + (rand() % 25);
    buf[i * 3 + 1] = 138 + (rand() % 25);
    buf[i * 3 + 2] = 188 + (rand() % 25);
  }
  return buf;
}

describe("segmentTile", () => {
  it("labels white as background", () => {
    const labels = segmentTile(flatTile(4, 4, [255, 255, 255]), 4, 4);
    expect([...labels]).toEqual(new Array(16).fill(0));
  });

  it("labels near-white uniform as background, not blur", () => {
    const labels = segmentTile(flatTile(8, 8, [245, 245, 245]), 8, 8);
    expect([...new Set(labels)]).toEqual([0]);
  });

  it("labels saturated dark purple as fold", () => {
    const labels = segmentTile(flatTile(6, 6, [80, 15, 130]), 6, 6);
    expect([...new Set(labels)]).toEqual([2]);
  });

  it("labels flat mid-tone as blur (no texture)", () => {
    const labels = segmentTile(flatTile(8, 8, [150, 150, 150]), 8, 8);
    expect([...new Set(labels)]).toEqual([3]);
  });

  it("labels noisy pink as tissue", () => {
    const labels = segmentTile(noisyTissue(32, 32), 32, 32);
    let tissue = 0;
    for (const v of labels) if (v === 1) tissue++;
    expect(tissue / labels.length).toBeGreaterThan(0.99);
  });

  it("is deterministic", () => {
    const tile = noisyTissue(16, 16, 7);
    expect(Buffer.from(segmentTile(tile, 16, 16)).equals(
      Buffer.from(segmentTile(tile, 16, 16)))).toBe(true);
  });
});

describe("cleanTile", () => {
  it("is the identity on pen-free tiles", () => {
    const tile = noisyTissue(16, 16, 3);
    expect(cleanTile(tile, 16, 16).equals(tile)).toBe(true);
  });

  it("removes a blue stroke", () => {
    const tile = noisyTissue(32, 32, 5);
    for (let x = 4; x < 28; x++) {
      const i = (10 * 32 + x) * 3;
      tile[i] = 30;
      tile[i + 1] = 30;
      tile[i + 2] = 220;
    }
    const cleaned = cleanTile(tile, 32, 32);
    const labels = segmentTile(cleaned, 32, 32);
    // no pixel should satisfy the blue pen rule after cleaning
    for (let i = 0; i < 32 * 32; i++) {
      const r = cleaned[i * 3];
      const g = cleaned[i * 3 + 1];
      const b = cleaned[i * 3 + 2];
      expect(b - Math.max(r, g) > 50 && b > 100).toBe(false);
    }
    expect(labels.length).toBe(1024);
  });

  it("whitens an all-pen tile", () => {
    const tile = flatTile(8, 8, [20, 20, 20]);
    const cleaned = cleanTile(tile, 8, 8);
    expect([...new Set(cleaned)]).toEqual([255]);
  });

  it("fills an isolated pen pixel with the neighborhood mean", () => {
    const tile = flatTile(5, 5, [200, 200, 200]);
    const center = (2 * 5 + 2) * 3;
    tile[center] = 250;
    tile[center + 1] = 20;
    tile[center + 2] = 20;
    const cleaned = cleanTile(tile, 5, 5);
    expect([cleaned[center], cleaned[center + 1], cleaned[center + 2]])
      .toEqual([200, 200, 200]);
  });
});
