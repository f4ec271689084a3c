/**
 * Client-side forward kinematics for the five-joint desk arm.
 *
 * Reimplements the hub's chain fold so the console can draw joint frames
 * locally and cross-check every telemetry frame: the hub-reported pose must
 * agree with this FK to 1e-6, else the drift badge lights (catches codec or
 * kinematics skew between the two codebases).
 */

export interface DhLink {
  alpha: number; // twist about x, radians
  a: number; // link length along x, m
  d: number; // offset along z, m
  thetaHome: number;
  thetaMin: number;
  thetaMax: number;
}

// Row-major 4x4 homogeneous transform.
export type Mat4 = number[][];

// Shipped default chain, same numbers the hub loads as `arm_table1`.
export const ARM_TABLE1: DhLink[] = [
  { alpha: 0.0, a: 0.0, d: 0.0, thetaHome: 0.0, thetaMin: -2.0943951023931953, thetaMax: 2.0943951023931953 },
  { alpha: -1.5707963267948966, a: 0.0, d: 0.0, thetaHome: 0.0, thetaMin: -3.141592653589793, thetaMax: 0.0 },
  { alpha: 0.0, a: 0.12941763737, d: 0.0, thetaHome: 0.0, thetaMin: -2.0943951023931953, thetaMax: 2.0943951023931953 },
  { alpha: 0.0, a: 0.12941763737, d: 0.0, thetaHome: 0.0, thetaMin: -3.490658503988659, thetaMax: 0.3490658503988659 },
  { alpha: -1.5707963267948966, a: 0.0, d: 0.0, thetaHome: 0.0, thetaMin: -2.0943951023931953, thetaMax: 2.0943951023931953 },
];

/** Pose agreement bound between hub telemetry and local FK. */
export const FK_TOLERANCE = 1e-6;

export function identity4(): Mat4 {
  return [
    [1, 0, 0, 0],
    [0, 1, 0, 0],
    [0, 0, 1, 0],
    [0, 0, 0, 1],
  ];
}

export function matmul4(a: Mat4, b: Mat4): Mat4 {
  const out = identity4();
  for (let i = 0; i < 4; i++) {
    for (let j = 0; j < 4; j++) {
      out[i][j] =
        a[i][0] * b[0][j] +
        a[i][1] * b[1][j] +
        a[i][2] * b[2][j] +
        a[i][3] * b[3][j];
    }
  }
  return out;
}

/** Per-joint transform Rx(alpha) Tx(a) Rz(thetaHome + q) Tz(d), closed form. */
export function dhLinkTransform(link: DhLink, theta: number): Mat4 {
  if (!Number.isFinite(theta)) {
    throw new Error("theta must be finite");
  }
  const t = link.thetaHome + theta;
  const ct = Math.cos(t);
  const st = Math.sin(t);
  const ca = Math.cos(link.alpha);
  const sa = Math.sin(link.alpha);
  return [
    [ct, -st, 0.0, link.a],
    [st * ca, ct * ca, -sa, -sa * link.d],
    [st * sa, ct * sa, ca, ca * link.d],
    [0.0, 0.0, 0.0, 1.0],
  ];
}

function checkQ(chain: DhLink[], q: number[]): void {
  if (q.length !== chain.length) {
    throw new Error(`expected ${chain.length} joint angles, got ${q.length}`);
  }
}

/** Cumulative frames [A1, A1 A2, ...]; the last is the end-effector pose. */
export function forwardFrames(chain: DhLink[], q: number[]): Mat4[] {
  checkQ(chain, q);
  const frames: Mat4[] = [];
  let t = identity4();
  for (let i = 0; i < chain.length; i++) {
    t = matmul4(t, dhLinkTransform(chain[i], q[i]));
    frames.push(t);
  }
  return frames;
}

/** Base-to-end-effector transform, mount not applied (matches telemetry). */
export function forwardKinematics(chain: DhLink[], q: number[]): Mat4 {
  const frames = forwardFrames(chain, q);
  return frames[frames.length - 1];
}

/**
 * Unit quaternion (x, y, z, w) of the rotation block. Largest-component
 * branch keeps the extraction well conditioned near every axis.
 */
export function quatFromMatrix(m: Mat4): number[] {
  const trace = m[0][0] + m[1][1] + m[2][2];
  let x: number, y: number, z: number, w: number;
  if (trace > 0) {
    const s = Math.sqrt(trace + 1.0) * 2;
    w = 0.25 * s;
    x = (m[2][1] - m[1][2]) / s;
    y = (m[0][2] - m[2][0]) / s;
    z = (m[1][0] - m[0][1]) / s;
  } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
    const s = Math.sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2;
    w = (m[2][1] - m[1][2]) / s;
    x = 0.25 * s;
    y = (m[0][1] + m[1][0]) / s;
    z = (m[0][2] + m[2][0]) / s;
  } else if (m[1][1] > m[2][2]) {
    const s = Math.sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2;
    w = (m[0][2] - m[2][0]) / s;
    x = (m[0][1] + m[1][0]) / s;
    y = 0.25 * s;
    z = (m[1][2] + m[2][1]) / s;
  } else {
    const s = Math.sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2;
    w = (m[1][0] - m[0][1]) / s;
    x = (m[0][2] + m[2][0]) / s;
    y = (m[1][2] + m[2][1]) / s;
    z = 0.25 * s;
  }
  return [x, y, z, w];
}

// q and -q are the same rotation; align signs before differencing.
export function quatDistance(qa: number[], qb: number[]): number {
  let dot = 0;
  for (let i = 0; i < 4; i++) dot += qa[i] * qb[i];
  const sign = dot < 0 ? -1 : 1;
  let worst = 0;
  for (let i = 0; i < 4; i++) {
    worst = Math.max(worst, Math.abs(qa[i] - sign * qb[i]));
  }
  return worst;
}

export interface FkDrift {
  position: number; // max abs component error, m
  orientation: number; // max abs quaternion component error, sign-aligned
  ok: boolean;
}

/** Compare a hub-reported pose against local FK of the reported joints. */
export function fkDrift(
  chain: DhLink[],
  joints: number[],
  eePosition: number[],
  eeOrientation: number[],
): FkDrift {
  const m = forwardKinematics(chain, joints);
  let position = 0;
  for (let i = 0; i < 3; i++) {
    position = Math.max(position, Math.abs(m[i][3] - eePosition[i]));
  }
  const orientation = quatDistance(quatFromMatrix(m), eeOrientation);
  return {
    position,
    orientation,
    ok: position <= FK_TOLERANCE && orientation <= FK_TOLERANCE,
  };
}
