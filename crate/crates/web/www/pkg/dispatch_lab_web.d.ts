/* tslint:disable */
/* eslint-disable */

/**
 * B* for one linear layer.
 */
export function crossover(t_overhead_us: number, throughput_flops: number, d_in: number, d_out: number): string;

/**
 * B* for the representative projections of both model presets.
 */
export function crossover_rows(t_overhead_us: number, throughput_flops: number): string;

/**
 * Dispatch ledgers of all three pipeline variants for a preset, with the
 * layer count optionally overridden (`layers < 0` keeps the preset).
 */
export function ledger(model: string, layers: number): string;

/**
 * TTFT overhead partition plus its sensitivity scan.
 */
export function partition(ttft_fused_ms: number, n_ops: number, dispatch_low_us: number, dispatch_high_us: number, per_op_overhead_us: number, perturb_percent: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly crossover: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly crossover_rows: (a: number, b: number) => [number, number, number, number];
    readonly ledger: (a: number, b: number, c: number) => [number, number, number, number];
    readonly partition: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
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
