//! Score hidden neurons by forget/retain activation ratio, build a mask and
//! apply it.

use edge_unlearn::nn::{evaluate, personalize, synthetic_digits, Architecture, Model, TrainConfig};
use edge_unlearn::unlearn::{apply_mask, importance, score, select_mask, LayerScores, MaskScope};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> edge_unlearn::Result<()> {
    let arch = Architecture::mlp(&[784, 64, 32, 10])?;
    let init = Model::random(arch.clone(), &mut ChaCha8Rng::seed_from_u64(1));
    let cfg = TrainConfig {
        epochs: 3,
        lr: 0.02,
        trainable_layers: vec![0, 1, 2],
        seed: 2,
    };
    let (m, _) = personalize(&init, &synthetic_digits(2000, 3), &cfg)?;

    let forget_class = [7];
    let pool = synthetic_digits(600, 4);
    let (forget, retain) = (pool.filter_classes(&forget_class), pool.exclude_classes(&forget_class));
    let mut scores = Vec::new();
    for layer in [0, 1] {
        let s = score(&importance(&m, &forget, layer)?, &importance(&m, &retain, layer)?, 1e-6)?;
        let mut top: Vec<(usize, f64)> = s.iter().copied().enumerate().collect();
        top.sort_by(|a, b| b.1.total_cmp(&a.1));
        println!("layer {layer} top scores {:.2?}", &top[..3]);
        scores.push(LayerScores { layer, scores: s });
    }

    let mask = select_mask(&arch, &scores, MaskScope::WithOutgoing, 0.1, 1e-6)?;
    println!(
        "mask: neurons {:?}, {} coordinates, {:.3} of hidden-layer parameters",
        mask.neurons(),
        mask.coords().len(),
        mask.parameter_fraction(&arch)
    );

    let masked = apply_mask(&m, &mask)?;
    let test = synthetic_digits(1000, 5);
    for (name, model) in [("before", &m), ("masked", &masked)] {
        println!(
            "{name}: class 7 accuracy {:.3}, other classes {:.3}",
            evaluate(model, &test, Some(&forget_class))?,
            evaluate(model, &test.exclude_classes(&forget_class), None)?
        );
    }
    Ok(())
}
