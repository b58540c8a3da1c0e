mod common;

use sdarecon::measurement::LinearOperator;
use sdarecon::model::{Activation, LinearSda, NonlinearSda};
use sdarecon::numeric::Prng;
use sdarecon::training::{finetune, pretrain_stack, TrainConfig, TrainingSet};

fn cfg() -> TrainConfig {
    TrainConfig {
        finetune_epochs: 0,
        seed: 21,
        ..TrainConfig::default()
    }
}

#[test]
fn pretrained_start_no_worse_than_glorot_linear() {
    let signals = common::scene_patches(500, 8, &mut Prng::new(20));
    let op = LinearOperator::gaussian(16, 64, 20).unwrap();
    let set = TrainingSet::measured(&op, signals).unwrap();
    let skeleton = LinearSda::glorot(64, 16, &mut Prng::new(22)).unwrap();
    let (pre, _) = pretrain_stack(skeleton.clone(), &set, &cfg(), &mut |_| {}).unwrap();
    let (_, pre_trace) = finetune(pre, &set, &cfg()).unwrap();
    let (_, raw_trace) = finetune(skeleton, &set, &cfg()).unwrap();
    assert!(
        pre_trace[0] <= raw_trace[0],
        "pre-trained {} vs raw {}",
        pre_trace[0],
        raw_trace[0]
    );
}

#[test]
fn pretrained_start_no_worse_than_glorot_nonlinear() {
    let signals = common::scene_patches(500, 8, &mut Prng::new(23));
    let set = TrainingSet::signals(signals).unwrap();
    let skeleton = NonlinearSda::glorot(64, 16, Activation::Sigmoid, &mut Prng::new(24)).unwrap();
    let (pre, _) = pretrain_stack(skeleton.clone(), &set, &cfg(), &mut |_| {}).unwrap();
    let (_, pre_trace) = finetune(pre, &set, &cfg()).unwrap();
    let (_, raw_trace) = finetune(skeleton, &set, &cfg()).unwrap();
    assert!(
        pre_trace[0] <= raw_trace[0],
        "pre-trained {} vs raw {}",
        pre_trace[0],
        raw_trace[0]
    );
}
