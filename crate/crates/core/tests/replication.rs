use paynet_sim::harness::replicate_tables;

#[test]
fn published_tables_reproduce() {
    let r = replicate_tables().unwrap();
    print!("{}", r.to_text());
    assert!(r.all_match());
}
