//! Second-order compensation of one parameter block, in floating and fixed
//! point.

use edge_unlearn::numeric::{encode_slice, FISHER_FRAC_BITS, WEIGHT_FRAC_BITS};
use edge_unlearn::obs::{adjust_block_fixed, kkt_residual_fx, obs_adjust, quadratic_value};

fn main() -> edge_unlearn::Result<()> {
    // a small correlated curvature block
    let n = 5;
    let mut f = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            f[i * n + j] = 0.6f64.powi((i as i32 - j as i32).abs()) + if i == j { 0.1 } else { 0.0 };
        }
    }
    let w = [0.8, -0.3, 0.5, 0.2, -0.7];

    let zeroed: Vec<f64> = w.iter().enumerate().map(|(k, &v)| if k == 1 || k == 3 { -v } else { 0.0 }).collect();
    let delta = obs_adjust(&w, &f, &[1, 3])?;
    println!("plain zeroing      cost {:.6}", quadratic_value(&f, &zeroed));
    println!("compensated update cost {:.6}", quadratic_value(&f, &delta));
    println!("delta {delta:.5?}");

    let w_fx = encode_slice(&w, WEIGHT_FRAC_BITS)?;
    let f_fx = encode_slice(&f, FISHER_FRAC_BITS)?;
    let d_fx = adjust_block_fixed(0, &w_fx, &f_fx, &[1, 3])?;
    println!("fixed-point delta {d_fx:?}");
    println!("integer KKT residual {}", kkt_residual_fx(&f_fx, &d_fx, &[1, 3]));
    Ok(())
}
