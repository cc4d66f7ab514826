/**
 * Orbit camera state and its world-to-camera matrix.
 *
 * Conventions match the renderer: +z forward, image v downward, z-up world,
 * row-major 4x4 with translation -R * eye in the last column.
 */

export type Vec3 = readonly [number, number, number];

export interface Bounds {
  lo: readonly number[];
  hi: readonly number[];
}

export interface OrbitState {
  target: Vec3;
  radius: number;
  /** Angle around the world z axis, radians. */
  azimuth: number;
  /** Angle above the horizontal plane, radians, clamped inside +-pi/2. */
  elevation: number;
}

/** Keeps the view direction away from the world up axis. */
export const ELEVATION_LIMIT = 1.55;

const MIN_RADIUS = 1e-3;
const MAX_RADIUS = 1e6;

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

/**
 * Row-major world-to-camera matrix for a camera at `eye` facing `target`.
 *
 * Rows of the rotation block are (right, down, forward); homogeneous world
 * points map by left multiplication. Throws when the view direction is
 * parallel to `up`, where the frame is undefined.
 */
export function lookAtMatrix(eye: Vec3, target: Vec3, up: Vec3 = [0, 0, 1]): number[][] {
  const gaze = sub(target, eye);
  const forward = scale(gaze, 1 / norm(gaze));
  const side = cross(forward, up);
  const sideNorm = norm(side);
  if (sideNorm < 1e-9) {
    throw new Error("look-at view direction is parallel to up");
  }
  const right = scale(side, 1 / sideNorm);
  const down = cross(forward, right);
  const rows = [right, down, forward];
  return [
    ...rows.map((r) => [r[0], r[1], r[2], -(r[0] * eye[0] + r[1] * eye[1] + r[2] * eye[2])]),
    [0, 0, 0, 1],
  ];
}

export function orbitEye(state: OrbitState): Vec3 {
  const horizontal = state.radius * Math.cos(state.elevation);
  return [
    state.target[0] + horizontal * Math.cos(state.azimuth),
    state.target[1] + horizontal * Math.sin(state.azimuth),
    state.target[2] + state.radius * Math.sin(state.elevation),
  ];
}

export function orbitMatrix(state: OrbitState): number[][] {
  return lookAtMatrix(orbitEye(state), state.target);
}

/** Initial orbit framing the scene's bounding box. */
export function defaultOrbit(bounds: Bounds): OrbitState {
  const target: Vec3 = [
    ((bounds.lo[0] ?? 0) + (bounds.hi[0] ?? 0)) / 2,
    ((bounds.lo[1] ?? 0) + (bounds.hi[1] ?? 0)) / 2,
    ((bounds.lo[2] ?? 0) + (bounds.hi[2] ?? 0)) / 2,
  ];
  let extent = 0;
  for (let axis = 0; axis < 3; axis++) {
    extent = Math.max(extent, (bounds.hi[axis] ?? 0) - (bounds.lo[axis] ?? 0));
  }
  return {
    target,
    radius: Math.max(2.5 * extent, MIN_RADIUS),
    azimuth: 0.9,
    elevation: 0.4,
  };
}

/** Drag by (dx, dy) pixels; elevation stays inside the up-axis guard. */
export function rotateOrbit(state: OrbitState, dx: number, dy: number,
                            speed: number = 0.008): OrbitState {
  const elevation = Math.min(
    ELEVATION_LIMIT, Math.max(-ELEVATION_LIMIT, state.elevation + dy * speed));
  return { ...state, azimuth: state.azimuth - dx * speed, elevation };
}

/** Multiplicative zoom; factor > 1 moves away from the target. */
export function zoomOrbit(state: OrbitState, factor: number): OrbitState {
  const radius = Math.min(MAX_RADIUS, Math.max(MIN_RADIUS, state.radius * factor));
  return { ...state, radius };
}
