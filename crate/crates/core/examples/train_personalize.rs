//! Pretrain an MLP on synthetic digits, then fine-tune the upper layers on a
//! pixel-inverted subset.

use edge_unlearn::nn::{evaluate, personalize, synthetic_digits, Architecture, Model, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> edge_unlearn::Result<()> {
    let train = synthetic_digits(2000, 1);
    let test = synthetic_digits(500, 2);
    let arch = Architecture::mlp(&[784, 64, 32, 10])?;
    let init = Model::random(arch, &mut ChaCha8Rng::seed_from_u64(3));

    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.02,
        trainable_layers: vec![0, 1, 2],
        seed: 4,
    };
    let (base, losses) = personalize(&init, &train, &cfg)?;
    println!("pretrain losses {losses:.4?}");
    println!("clean test accuracy {:.3}", evaluate(&base, &test, None)?);

    let inv_train = synthetic_digits(1000, 5).inverted();
    let inv_test = test.inverted();
    println!("inverted accuracy before {:.3}", evaluate(&base, &inv_test, None)?);
    let (tuned, losses) = personalize(
        &base,
        &inv_train,
        &TrainConfig {
            epochs: 2,
            lr: 0.01,
            trainable_layers: vec![1, 2],
            seed: 6,
        },
    )?;
    println!("personalize losses {losses:.4?}");
    println!("inverted accuracy after  {:.3}", evaluate(&tuned, &inv_test, None)?);
    // layer 0 was frozen
    assert_eq!(base.layers()[0], tuned.layers()[0]);
    Ok(())
}
