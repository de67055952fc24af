#include <benchmark/benchmark.h>

// libbenchmark_main.a ships LTO bytecode that newer GCC point releases reject.
BENCHMARK_MAIN();
