import { describe, expect, test } from "vitest";

import { RingBuffer } from "../src/ring.js";

describe("RingBuffer", () => {
  test("keeps only the newest items once full", () => {
    const ring = new RingBuffer<number>(3);
    [1, 2, 3, 4, 5].forEach((n) => ring.push(n));
    expect(ring.length).toBe(3);
    expect(ring.toArray()).toEqual([3, 4, 5]);
    expect(ring.last()).toBe(5);
  });

  test("empty ring has no last and an empty snapshot", () => {
    const ring = new RingBuffer<string>(2);
    expect(ring.length).toBe(0);
    expect(ring.last()).toBeUndefined();
    expect(ring.toArray()).toEqual([]);
  });

  test("timeline-sized ring holds exactly 500 of 1200 pushes, in order", () => {
    const ring = new RingBuffer<number>(500);
    for (let i = 0; i < 1200; i++) ring.push(i);
    const out = ring.toArray();
    expect(out.length).toBe(500);
    expect(out[0]).toBe(700);
    expect(out[499]).toBe(1199);
    for (let i = 1; i < out.length; i++) {
      expect(out[i]).toBe(out[i - 1] + 1);
    }
  });

  test("clear drops contents but keeps capacity", () => {
    const ring = new RingBuffer<number>(2);
    ring.push(1);
    ring.push(2);
    ring.clear();
    expect(ring.length).toBe(0);
    ring.push(7);
    expect(ring.toArray()).toEqual([7]);
    expect(ring.capacity).toBe(2);
  });

  test("capacity must be a positive integer", () => {
    expect(() => new RingBuffer(0)).toThrow(/positive/);
    expect(() => new RingBuffer(-3)).toThrow(/positive/);
    expect(() => new RingBuffer(2.5)).toThrow(/positive/);
  });
});
