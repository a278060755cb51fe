/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Answers `n_queries` mixed-difficulty queries on a simulated cluster.
     */
    cluster(nodes: number, k: number, scheduler: string, stealing: boolean, sharing: boolean, n_queries: number): string;
    is_empty(): boolean;
    len(): number;
    /**
     * Random-walk dataset indexed on one simulated node.
     */
    constructor(count: number, length: number, seed: bigint);
    /**
     * Exact k-NN (`window` absent) or DTW 1-NN for a noisy copy of a
     * random series.
     */
    search(query_seed: bigint, noise: number, k: number, window?: number | null): string;
}

/**
 * Splits queries with the given cost estimates over `nodes`; dynamic
 * policies return the dispatch order.
 */
export function schedule(estimates: Float64Array, nodes: number, policy: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_cluster: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly demo_is_empty: (a: number) => number;
    readonly demo_len: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: bigint) => [number, number, number];
    readonly demo_search: (a: number, b: bigint, c: number, d: number, e: number) => [number, number, number, number];
    readonly schedule: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
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
