/**
 * Fixed-capacity append-only ring. The timeline keeps the newest 500
 * transitions so a long session redraws at 20 Hz without unbounded growth.
 */

export class RingBuffer<T> {
  private readonly items: T[];
  private start = 0;
  private count = 0;

  constructor(readonly capacity: number) {
    if (!Number.isInteger(capacity) || capacity <= 0) {
      throw new Error("capacity must be a positive integer");
    }
    this.items = new Array<T>(capacity);
  }

  get length(): number {
    return this.count;
  }

  /** Append one item, evicting the oldest once full. */
  push(item: T): void {
    const end = (this.start + this.count) % this.capacity;
    this.items[end] = item;
    if (this.count < this.capacity) {
      this.count += 1;
    } else {
      this.start = (this.start + 1) % this.capacity;
    }
  }

  /** Drop everything; capacity is unchanged. */
  clear(): void {
    this.start = 0;
    this.count = 0;
  }

  /** Newest item, or undefined while empty. */
  last(): T | undefined {
    if (this.count === 0) return undefined;
    return this.items[(this.start + this.count - 1) % this.capacity];
  }

  /** Oldest-to-newest snapshot as a plain array. */
  toArray(): T[] {
    const out: T[] = [];
    for (let i = 0; i < this.count; i++) {
      out.push(this.items[(this.start + i) % this.capacity]);
    }
    return out;
  }
}
