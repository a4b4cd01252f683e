//! punforge: an iterative generate-evaluate-refine pipeline for idiom-based
//! visual puns.
//!
//! Given an idiom, a prompt LLM writes a visual prompt, a text-to-image
//! model renders it, a multimodal model names the idiom it sees, a judge
//! checks semantic equivalence, and — on a miss — an update model proposes
//! concrete prompt edits for the next round. Runs persist as JSONL manifests
//! plus a content-addressed image store, and the evaluation side aggregates
//! them into accuracy matrices and ablation ladders. Deterministic scripted
//! and stochastic providers make the whole pipeline exercisable offline.

pub mod cli;
pub mod dataset;
pub mod engine;
pub mod evalbench;
pub mod matcher;
pub mod model;
pub mod providers;
pub mod simzoo;
