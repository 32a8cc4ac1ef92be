// Content/style similarity trade-off as the number of styled layers grows.
//
// Run with `cargo run --example tradeoff_curve`.

use layerscope::eval::{read_similarity_from, tradeoff_curve, Conditioning, CurveFilter};

const TABLE: &str = "\
image_id,method_tag,k_layers,conditioning,prompt_class,content_sim,style_sim
a1,ours,0,text_only,easy,0.34,0.15
a2,ours,0,text_only,complex,0.30,0.18
a1,ours,20,text_only,easy,0.31,0.35
a2,ours,20,text_only,complex,0.29,0.38
a1,ours,40,text_only,easy,0.25,0.55
a1,ours,40,canny,easy,0.27,0.52
";

pub fn run_example() -> layerscope::Result<()> {
    let records = read_similarity_from(TABLE.as_bytes())?;
    let filter = CurveFilter {
        method_tag: Some("ours".into()),
        conditioning: Some(Conditioning::TextOnly),
        prompt_class: None,
    };
    let curve = tradeoff_curve(&records, |r| filter.matches(r))?;
    let mut csv = Vec::new();
    curve.write_to(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
