/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const plan_planar: (a: number, b: number) => [number, number];
export const score_program: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
export const smooth_waypoints: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
