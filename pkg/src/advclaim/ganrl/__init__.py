"""GAN pretraining plus gray-box reinforcement refinement of the generator."""
from .gan import GanDivergence, GanHistory, generate_batch, pretrain_gan
from .nets import DiscriminatorNet, GeneratorNet, Mlp
from .rl import (
    AttackEvaluation,
    EpisodeTrace,
    RlConfig,
    evaluate_generator,
    replay_latents,
    rl_refine,
    step_reward,
    td_error,
    td_update,
    write_trace_jsonl,
)
from .surrogate import (
    ProtocolError,
    QueryBudgetExceeded,
    SurrogateHandle,
    attach_local_surrogate,
    attach_target_as_surrogate,
)

__all__ = [
    "GanDivergence", "GanHistory", "generate_batch", "pretrain_gan",
    "DiscriminatorNet", "GeneratorNet", "Mlp",
    "AttackEvaluation", "EpisodeTrace", "RlConfig", "evaluate_generator", "replay_latents",
    "rl_refine", "step_reward", "td_error", "td_update", "write_trace_jsonl",
    "ProtocolError", "QueryBudgetExceeded", "SurrogateHandle",
    "attach_local_surrogate", "attach_target_as_surrogate",
]
