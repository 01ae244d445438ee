//! Prints the lemma check table with default settings.
fn main() -> vbnn::Result<()> {
    let t = std::time::Instant::now();
    let reports = vbnn::lemmas::run_all(&vbnn::lemmas::LemmaSuiteConfig::default(), 0)?;
    print!("{}", vbnn::lemmas::summary_table(&reports));
    for r in &reports {
        println!("{}: {}", r.lemma_id, r.details);
    }
    eprintln!("{:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
