//! The autodiff engine on its own: build an expression, backpropagate,
//! and verify every gradient against central finite differences.

use vcmil::tensor::gradcheck::{check_gradients, GradCheckConfig};
use vcmil::tensor::Tensor;

fn main() -> vcmil::Result<()> {
    let x = Tensor::param(vec![0.5, -1.0, 2.0, 0.1, 0.7, -0.3], vec![2, 3])?;
    let w = Tensor::param(vec![0.2, -0.4, 0.9, 0.3, -0.8, 0.1], vec![3, 2])?;
    let b = Tensor::param(vec![0.05, -0.02], vec![2])?;

    let h = x.matmul(&w)?.add_bias(&b)?.relu();
    let loss = h.mul(&h)?.mean();
    println!("loss = {:.6}", loss.value());

    loss.backward()?;
    println!("x grad = {:?}", x.grad().unwrap());
    println!("w grad = {:?}", w.grad().unwrap());
    println!("b grad = {:?}", b.grad().unwrap());

    let params = [
        ("x".to_string(), x.clone()),
        ("w".to_string(), w.clone()),
        ("b".to_string(), b.clone()),
    ];
    let report = check_gradients(
        &params,
        || {
            let h = x.matmul(&w)?.add_bias(&b)?.relu();
            Ok(h.mul(&h)?.mean())
        },
        &GradCheckConfig::default(),
    )?;
    println!(
        "finite differences: {} entries checked, max rel err {:.2e}, kinks {}",
        report.checked, report.max_rel_diff, report.kinks
    );
    Ok(())
}
