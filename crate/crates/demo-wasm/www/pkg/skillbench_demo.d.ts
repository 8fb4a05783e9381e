/* tslint:disable */
/* eslint-disable */

/**
 * Plans a collision-free motion of the demo arm between two tool positions.
 *
 * Request: `{"obstacles": [{"min": [x, y], "max": [x, y]}], "start": [x, y], "goal": [x, y], "seed": n}`.
 * Response: `{"ok": true, "joints": [[q1, q2], ...], "arm": [[[ex, ey], [tx, ty]], ...]}`.
 */
export function plan_planar(request: string): string;

/**
 * Scores a predicted skill program against a reference.
 *
 * `prediction` may contain surrounding prose; calls are recovered from it.
 * `weights` is `w1,w2,w3,w4` or empty for equal weights. The response
 * carries the metric report, both dependency-graph dumps, and extraction
 * diagnostics.
 */
export function score_program(reference: string, prediction: string, weights: string): string;

/**
 * Catmull-Rom Bezier smoothing of 2-D waypoints. Each waypoint's heading
 * points at the next one; headings between waypoints are SLERPed.
 *
 * Request: `{"points": [[x, y], ...], "samples": n}`.
 * Response: `{"ok": true, "path": [[x, y, heading], ...]}`.
 */
export function smooth_waypoints(request: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly plan_planar: (a: number, b: number) => [number, number];
    readonly score_program: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly smooth_waypoints: (a: number, b: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
