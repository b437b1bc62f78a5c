//! Relative geometry of a few boxes, the per-head gates it produces and how
//! they reshape attention when the appearance logits carry no preference.
//!
//! ```text
//! cargo run --release --example geometric_attention
//! ```

use mtsm::attention::{gated_weights, DEFAULT_EPS_G};
use mtsm::geometry::{geometric_bias_values, relative_geometry, sinusoid_embed, BoundingBox, LogBase};
use mtsm::model::{CaptionModel, ModelConfig};
use mtsm::tensor::Tensor;

fn print_matrix(name: &str, t: &Tensor) {
    println!("{name}:");
    for i in 0..t.shape()[0] {
        let row: Vec<String> = t.row(i).iter().map(|v| format!("{v:7.3}")).collect();
        println!("  {}", row.join(" "));
    }
}

fn main() -> mtsm::Result<()> {
    // A large box, a small one beside it and a distant one.
    let boxes = [
        BoundingBox::new(0.30, 0.50, 0.40, 0.40),
        BoundingBox::new(0.55, 0.50, 0.10, 0.10),
        BoundingBox::new(0.90, 0.10, 0.15, 0.15),
    ];
    let config = ModelConfig::tiny(8);
    let geo = relative_geometry(&boxes, config.eps_center, LogBase::Ten)?;
    for a in 0..boxes.len() {
        for b in 0..boxes.len() {
            let d = geo.pair(a, b);
            println!("delta({a},{b}) = [{:6.3} {:6.3} {:6.3} {:6.3}]", d[0], d[1], d[2], d[3]);
        }
    }

    let emb = sinusoid_embed(&geo, config.d_g)?;
    // Randomly initialised gate projection of the first encoder layer.
    let model = CaptionModel::new(config.clone(), 1)?;
    let w_g = model.params.get("enc.0.w_g").expect("geometry is on in the tiny preset");
    let bias = geometric_bias_values(&emb, w_g)?;

    let flat = Tensor::zeros(&[boxes.len(), boxes.len()]);
    print_matrix("\nplain softmax of flat logits", &gated_weights(&flat, None, None, DEFAULT_EPS_G)?);
    // A row whose gates are all zero falls back to the plain softmax; a
    // row with some positive gates is pulled almost entirely onto them.
    for h in 0..config.heads.min(2) {
        let gate = bias.head(h);
        print_matrix(&format!("\nhead {h} gate"), &gate);
        print_matrix(&format!("head {h} gated weights"), &gated_weights(&flat, Some(&gate), None, DEFAULT_EPS_G)?);
    }
    Ok(())
}
