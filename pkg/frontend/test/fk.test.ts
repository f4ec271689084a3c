import { describe, expect, test } from "vitest";

import {
  ARM_TABLE1,
  dhLinkTransform,
  FK_TOLERANCE,
  fkDrift,
  forwardFrames,
  forwardKinematics,
  quatDistance,
  quatFromMatrix,
  type Mat4,
} from "../src/fk.js";
import fixtures from "../fixtures/fk_fixtures.json";

// Fixtures are generated by the hub codebase; agreement here is the
// cross-language FK oracle the drift badge depends on.
const CROSS_IMPL_TOL = 1e-9;

describe("chain constants", () => {
  test("fixture chain equals the embedded one, double for double", () => {
    expect(fixtures.chain.links.length).toBe(ARM_TABLE1.length);
    fixtures.chain.links.forEach((link, i) => {
      expect(ARM_TABLE1[i].alpha).toBe(link.alpha);
      expect(ARM_TABLE1[i].a).toBe(link.a);
      expect(ARM_TABLE1[i].d).toBe(link.d);
      expect(ARM_TABLE1[i].thetaHome).toBe(link.theta_home);
      expect(ARM_TABLE1[i].thetaMin).toBe(link.theta_min);
      expect(ARM_TABLE1[i].thetaMax).toBe(link.theta_max);
    });
  });
});

describe("forward kinematics vs hub fixtures", () => {
  test("home posture reaches the documented end-effector point", () => {
    const m = forwardKinematics(ARM_TABLE1, [0, 0, 0, 0, 0]);
    expect(m[0][3]).toBeCloseTo(0.25883527474, 12);
    expect(Math.abs(m[1][3])).toBeLessThan(1e-15);
    expect(Math.abs(m[2][3])).toBeLessThan(1e-15);
  });

  test("every fixture case matches frames, position, and quaternion", () => {
    for (const c of fixtures.cases) {
      const frames = forwardFrames(ARM_TABLE1, c.q);
      expect(frames.length).toBe(c.frames.length);
      frames.forEach((f, k) => {
        for (let i = 0; i < 4; i++) {
          for (let j = 0; j < 4; j++) {
            expect(Math.abs(f[i][j] - c.frames[k][i][j])).toBeLessThanOrEqual(
              CROSS_IMPL_TOL,
            );
          }
        }
      });
      const m = frames[frames.length - 1];
      for (let i = 0; i < 3; i++) {
        expect(Math.abs(m[i][3] - c.ee_position[i])).toBeLessThanOrEqual(
          CROSS_IMPL_TOL,
        );
      }
      expect(
        quatDistance(quatFromMatrix(m), c.ee_quat),
      ).toBeLessThanOrEqual(CROSS_IMPL_TOL);
    }
  });

  test("fkDrift accepts every fixture pose and flags a perturbed one", () => {
    for (const c of fixtures.cases) {
      const drift = fkDrift(ARM_TABLE1, c.q, c.ee_position, c.ee_quat);
      expect(drift.ok).toBe(true);
    }
    const c0 = fixtures.cases[0];
    const off = [...c0.ee_position];
    off[0] += 5 * FK_TOLERANCE;
    const drift = fkDrift(ARM_TABLE1, c0.q, off, c0.ee_quat);
    expect(drift.ok).toBe(false);
    expect(drift.position).toBeGreaterThan(FK_TOLERANCE);
  });
});

describe("input validation", () => {
  test("non-finite joint angles are refused", () => {
    expect(() => dhLinkTransform(ARM_TABLE1[0], Number.NaN)).toThrow(/finite/);
  });

  test("wrong joint count is refused", () => {
    expect(() => forwardFrames(ARM_TABLE1, [0, 0])).toThrow(/expected 5/);
  });
});

describe("quaternion extraction", () => {
  const cases: Array<[string, Mat4, number[]]> = [
    [
      "half turn about x",
      [
        [1, 0, 0, 0],
        [0, -1, 0, 0],
        [0, 0, -1, 0],
        [0, 0, 0, 1],
      ],
      [1, 0, 0, 0],
    ],
    [
      "half turn about y",
      [
        [-1, 0, 0, 0],
        [0, 1, 0, 0],
        [0, 0, -1, 0],
        [0, 0, 0, 1],
      ],
      [0, 1, 0, 0],
    ],
    [
      "half turn about z",
      [
        [-1, 0, 0, 0],
        [0, -1, 0, 0],
        [0, 0, 1, 0],
        [0, 0, 0, 1],
      ],
      [0, 0, 1, 0],
    ],
  ];
  // Half turns have trace -1, which exercises each off-diagonal branch.
  for (const [name, m, want] of cases) {
    test(name, () => {
      expect(quatDistance(quatFromMatrix(m), want)).toBeLessThanOrEqual(1e-15);
    });
  }

  test("sign-flipped quaternions compare equal", () => {
    const q = quatFromMatrix(forwardKinematics(ARM_TABLE1, [0.3, -0.2, 0.5, -0.1, 0.4]));
    const flipped = q.map((v) => -v);
    expect(quatDistance(q, flipped)).toBe(0);
  });
});
