//! Per-class confusion counts and the macro-averaged scores derived from
//! them.
//!
//! ```text
//! cargo run --example metrics
//! ```

use fedcrop::learner::MetricsReport;

fn main() -> fedcrop::Result<()> {
    let truth = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2];
    let predicted = [0, 0, 1, 1, 1, 2, 2, 2, 2, 0];
    let m = MetricsReport::from_predictions(&truth, &predicted, 3, 0.0)?;
    println!("class  TP  TN  FP  FN  precision  recall  f1");
    for (c, k) in m.per_class.iter().enumerate() {
        println!(
            "{c:>5}  {:>2}  {:>2}  {:>2}  {:>2}  {:<9.4}  {:<6.4}  {:.4}",
            k.true_positive, k.true_negative, k.false_positive, k.false_negative, k.precision(), k.recall(), k.f1()
        );
    }
    println!("accuracy {:.4}, macro precision {:.4}, macro recall {:.4}, f1 {:.4}", m.accuracy, m.precision, m.recall, m.f1);
    Ok(())
}
