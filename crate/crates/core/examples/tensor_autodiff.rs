//! Builds a tiny graph by hand (dilated conv, relu, pooling, upsampling),
//! runs backward, and compares one weight gradient against central
//! differences.

use multicount::tensor::{ConvSpec, Graph, Shape, Tensor};
use multicount::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn forward(w: &Tensor, x: &Tensor, b: &Tensor) -> Result<(Graph, multicount::tensor::Var, multicount::tensor::Var)> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let wv = g.param(w.clone());
    let bv = g.param(b.clone());
    let y = g.conv2d(xv, wv, bv, ConvSpec::dilated3(2, 3, 2))?;
    let y = g.relu(y);
    let y = g.max_pool2d(y)?;
    let y = g.upsample_bilinear(y, 2)?;
    let loss = g.sum_squared_error(y, &Tensor::full(Shape::new(1, 3, 8, 8), 0.25))?;
    Ok((g, wv, loss))
}

fn main() -> Result<()> {
    // random values: patterned inputs tie inside pooling windows, where the
    // loss is not differentiable
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut random = |n: usize, scale: f64| (0..n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<f64>>();
    let x = Tensor::from_vec(Shape::new(1, 2, 8, 8), random(128, 1.0))?;
    let w = Tensor::from_vec(Shape::new(3, 2, 3, 3), random(54, 0.3))?;
    let b = Tensor::full(Shape::vector(3), 0.05);

    let (mut g, wv, loss) = forward(&w, &x, &b)?;
    println!("loss = {:.6}  ({} graph nodes)", g.value(loss).data()[0], g.len());
    g.backward(loss)?;
    let grad = g.grad(wv).expect("weight is a parameter").to_vec();

    let h = 1e-6;
    for i in [0, 13, 40] {
        let mut up = w.clone();
        up.data_mut()[i] += h;
        let mut down = w.clone();
        down.data_mut()[i] -= h;
        let f = |t: &Tensor| -> Result<f64> {
            let (g, _, l) = forward(t, &x, &b)?;
            Ok(g.value(l).data()[0])
        };
        let numeric = (f(&up)? - f(&down)?) / (2.0 * h);
        println!("dL/dw[{i:>2}]  analytic {:+.8}  numeric {:+.8}", grad[i], numeric);
    }
    Ok(())
}
