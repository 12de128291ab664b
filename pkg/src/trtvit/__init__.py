"""Hybrid CNN/Transformer block zoo with an analytical cost engine.

The package bundles: a small numpy-backed tensor/op layer with hand-written
backward passes and MAC instrumentation, the BottleNeck / Transformer /
mix-block zoo, the architecture preset library, closed-form parameter and
FLOP counting, a latency bench harness with CSV import/export, and the
TeraFLOPS / TeraParams compute-density metrics.
"""

from .tensor import (
    ConfigError,
    FormatError,
    MacCounter,
    PrecisionError,
    Rng,
    ShapeError,
    Tensor,
    elementwise,
    identity,
    matmul,
    ones,
    rand_normal,
    zeros,
)
from .arch import (
    ArchSpec,
    BlockSpec,
    Model,
    PRESET_NAMES,
    StageSpec,
    instantiate,
    load_weights,
    parse_arch_text,
    format_arch_text,
    preset,
    save_weights,
    validate,
)
from .analysis import (
    CostNode,
    MetricRow,
    count_block,
    count_model,
    count_op,
    guideline_report,
    teraflops,
    teraparams,
)
from .bench import (
    BenchConfig,
    LatencyRecord,
    bench_block,
    bench_model,
    export_latency_csv,
    import_latency_csv,
    join_metrics,
)
from .blocks import block_forward, block_trace, make_block
from .gradcheck import GradCheckReport, gradcheck_all, gradcheck_block, gradcheck_op

__version__ = "0.1.0"
