//! Rectified-flow machinery over trajectory latents.

pub mod data;
mod flow;
mod ode;
mod sample;
mod train;

pub use data::{
    random_motion, scene_from_motion, stack, synth_scenes, Clip, DeskCorpus, Scene, JITTER_EVAL_PX,
};
pub use flow::{
    boundary_init, interpolate, kstep_rollout, kstep_rollout_var, sample_time, AnchorMode,
    FlowProblem, LatentStats, T_MAX, T_MIN,
};
pub use ode::{
    dopri5_fixed_sample, dopri5_sample, euler_sample, integrate, GridSpacing, SamplerSpec, TimeGrid,
};
pub use sample::{sample_future, sample_futures, Forecast, Pipeline, SampleOptions};
pub use train::{
    encode_corpus, endpoint_error, eval_fm_loss, eval_vae, finetune_onpolicy, last_slice,
    train_flow, train_vae, train_visibility, FlowRun, LatentCorpus, LossCurve, VaeEval, VaeRun,
};
