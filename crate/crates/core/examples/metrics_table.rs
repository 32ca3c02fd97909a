//! Per-class MAE and root-mean-square count error, their class means, and
//! how reports over disjoint image sets combine.

use multicount::metrics::{class_mean, evaluate_metrics};
use multicount::Result;

fn main() -> Result<()> {
    for per_class in [[3.437, 4.624], [5.468, 7.102], [65.398, 19.467]] {
        println!("{per_class:?} -> mean {:.3}", class_mean(&per_class));
    }

    // (predicted, annotated) per class for five images
    let rows = vec![
        vec![(10.4, 11.0), (3.2, 3.0)],
        vec![(7.9, 7.0), (5.5, 6.0)],
        vec![(15.0, 14.0), (1.1, 1.0)],
        vec![(2.2, 2.0), (4.0, 4.0)],
        vec![(9.6, 9.0), (7.7, 8.0)],
    ];
    let all = evaluate_metrics(rows.clone())?;
    let a = evaluate_metrics(rows[..2].to_vec())?;
    let b = evaluate_metrics(rows[2..].to_vec())?;
    print!("{}", all.to_text());
    let weighted = (2.0 * a.mae_per_class[0] + 3.0 * b.mae_per_class[0]) / 5.0;
    println!("class 0 MAE from the two halves: {weighted:.6} (full: {:.6})", all.mae_per_class[0]);
    assert_eq!(a.merge(&b)?, all);
    Ok(())
}
