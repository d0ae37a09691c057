"""Real-time execution of action-chunking flow policies.

Asynchronous chunk handoff via guided inpainting, a toy force-controlled
benchmark that measures delay robustness, and a socket service for remote
inference.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .bench import (
    MetricRow,
    Series,
    SweepConfig,
    action_trace,
    max_accel,
    plot_solve_rate,
    read_metrics_csv,
    run_sweep,
    svg_line_plot,
    throughput,
    wilson_interval,
    write_metrics_csv,
)
from .chunks import ActionChunk, NoisyChunk, Observation
from .executor import (
    STRATEGY_NAMES,
    BidStub,
    EpisodeRecord,
    NaiveAsync,
    RTC,
    Synchronous,
    TemporalEnsemble,
    TickEvent,
    VirtualExecutor,
    load_episode_jsonl,
    make_strategy,
    run_episode,
    save_episode_jsonl,
    te_combine,
    validate_cell,
)
from .guidance import (
    GuidanceConfig,
    MaskWeights,
    denoise_estimate,
    guided_inference,
    hard_mask,
    pigdm_weight,
    soft_mask,
)
from .policy import (
    TrainConfig,
    VelocityFieldParams,
    cfm_loss,
    sample_unguided,
    train,
    velocity,
    velocity_vjp,
)
from .storage import Dataset, load_checkpoint, load_dataset, save_checkpoint, save_dataset

__version__ = "0.1.0"
