//! Build both synthetic tasks, score some completions, and round-trip the
//! dataset through its line-delimited export format.
//!
//! Run with: cargo run --release --example dataset_tour

use minirlhf::policy::TokenSeq;
use minirlhf::tasks::{
    export_dataset, gold_score, import_dataset, make_dataset, GoldMeta, TaskSpec,
};

fn main() -> anyhow::Result<()> {
    let spec = TaskSpec::tldr_toy(7);
    let records = make_dataset(&spec, 5)?;
    println!("tldr_toy:");
    for r in &records[..2] {
        let GoldMeta::TldrTarget { target } = &r.gold_meta else { unreachable!() };
        println!(
            "  prompt {:?}\n  hidden target {:?}\n  reference {:?} scores {:.3}",
            r.prompt.tokens,
            target,
            r.reference.tokens,
            gold_score(&spec, r, &r.reference)
        );
        let perfect = TokenSeq::completion(target.clone());
        println!("  the target itself scores {:.3}", gold_score(&spec, r, &perfect));
    }

    let math = TaskSpec::math_toy(7);
    let records = make_dataset(&math, 5)?;
    println!("math_toy:");
    for r in &records[..3] {
        let GoldMeta::MathAnswer { answer } = &r.gold_meta else { unreachable!() };
        let mut wrong = answer.clone();
        wrong[2] = if wrong[2] == 2 { 3 } else { 2 };
        wrong.push(math.vocab.eos_id);
        println!(
            "  prompt {:?} -> answer {:?}; correct scores {:.0}, wrong scores {:.0}",
            r.prompt.tokens,
            answer,
            gold_score(&math, r, &r.reference),
            gold_score(&math, r, &TokenSeq::completion(wrong)),
        );
    }

    let dir = std::env::temp_dir().join("minirlhf_dataset_tour");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("math.jsonl");
    export_dataset(&path, &math, &records)?;
    let (spec2, records2) = import_dataset(&path)?;
    println!("export/import round-trip: spec match {}, {} records", spec2 == math, records2.len());
    Ok(())
}
