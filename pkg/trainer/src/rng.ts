/** splitmix64 PRNG, mirrored across the toolkit for reproducible pipelines. */

const M64 = (1n << 64n) - 1n;

export class Prng {
  private state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & M64;
  }

  next(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & M64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & M64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & M64;
    return z ^ (z >> 31n);
  }

  below(n: number): number {
    return Number(this.next() % BigInt(n));
  }

  /** uniform in [0, 1) with 53 bits of entropy */
  uniform(): number {
    return Number(this.next() >> 11n) / 2 ** 53;
  }

  /** standard normal via Box-Muller */
  normal(): number {
    const u1 = Math.max(this.uniform(), 1e-300);
    const u2 = this.uniform();
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  }

  shuffle<T>(items: T[]): T[] {
    for (let i = items.length - 1; i > 0; i--) {
      const j = this.below(i + 1);
      [items[i], items[j]] = [items[j], items[i]];
    }
    return items;
  }
}
