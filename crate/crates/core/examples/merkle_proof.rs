//! Commit, unlearn, prove and verify with the hash-based backend, then show
//! that a tampered update is rejected.

use edge_unlearn::nn::{synthetic_digits, Architecture, Model};
use edge_unlearn::obs::{fisher_blocks, unlearn_update, Damping, UpdateVector};
use edge_unlearn::protocol::{client_setup, Commitment, prove, verify, Backend, PublicParams, Witness};
use edge_unlearn::unlearn::{MaskScope, PruneMask};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> edge_unlearn::Result<()> {
    let arch = Architecture::mlp(&[784, 32, 16, 10])?;
    let model = Model::random(arch.clone(), &mut ChaCha8Rng::seed_from_u64(1));
    let params = PublicParams::new(arch.clone(), 32, 3)?;
    let fisher = fisher_blocks(&model, &synthetic_digits(200, 2), params.partition(), Damping::Auto)?;

    let (com_p, com_h, openings) = client_setup(&params, &model, &fisher, Backend::Merkle, 7)?;
    if let Commitment::Merkle { leaves, root } = &com_p {
        println!("com_P: {leaves} leaves, root {}", hex::encode(root));
    }

    let mask = PruneMask::from_neurons(&arch, vec![(0, 3), (1, 5)], MaskScope::WithOutgoing, 0.05, 1e-6)?;
    let (post, delta) = unlearn_update(&model, &fisher, &mask)?;
    let witness = Witness {
        pre: &model,
        post: &post,
        delta: &delta,
        fisher: &fisher,
        openings: &openings,
    };
    let (proof, com_post) = prove(&params, &com_p, &com_h, &mask, &witness)?;
    println!(
        "{} touched blocks, proof {} bytes",
        proof.touched_blocks().len(),
        proof.to_bytes().len()
    );
    match verify(&params, &com_p, &com_post, &com_h, &mask, &proof) {
        Ok(()) => println!("honest update: ACCEPT"),
        Err(r) => println!("honest update: REJECT {r}"),
    }

    // nudge one surviving weight by 2^-8
    let mut cheat = post.clone();
    let i = (0..cheat.num_params()).find(|&i| !mask.contains(i) && delta.dense(params.partition())[i] != 0.0).unwrap();
    *cheat.param_mut(i).unwrap() += 1.0 / 256.0;
    let cheat_delta = UpdateVector::from_models(&model, &cheat, params.partition(), &mask)?;
    let witness = Witness {
        post: &cheat,
        delta: &cheat_delta,
        ..witness
    };
    let (proof, com_post) = prove(&params, &com_p, &com_h, &mask, &witness)?;
    match verify(&params, &com_p, &com_post, &com_h, &mask, &proof) {
        Ok(()) => println!("tampered update: ACCEPT"),
        Err(r) => println!("tampered update: REJECT {r}"),
    }
    Ok(())
}
