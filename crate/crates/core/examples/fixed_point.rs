//! Fixed-point encoding and Fiat-Shamir challenges.

use edge_unlearn::numeric::{fx_decode, fx_encode, Transcript, FISHER_FRAC_BITS, WEIGHT_FRAC_BITS};

fn main() -> edge_unlearn::Result<()> {
    for x in [0.1, -1.0 / 3.0, 2.5e-8, 1234.5678] {
        let w = fx_encode(x, WEIGHT_FRAC_BITS)?;
        let f = fx_encode(x, FISHER_FRAC_BITS)?;
        println!(
            "{x:>14.10}  w: {:>20} -> {:<16.12e}  F: {:>16} -> {:.12e}",
            w.value(),
            fx_decode(w),
            f.value(),
            fx_decode(f)
        );
    }
    // out of range values are rejected rather than wrapped
    println!("1e9 at 24 bits: {}", fx_encode(1e9, WEIGHT_FRAC_BITS).unwrap_err());

    let mut t = Transcript::new();
    t.absorb("commitment", b"example root");
    println!("digest {}", hex::encode(t.digest()));
    println!("challenges {:?}", t.challenge_ints("kkt", 6, 1 << 20));
    println!("scalar {}", hex::encode(t.challenge_scalar("rep").as_bytes()));
    Ok(())
}
