use newscycle::preprocess::{normalize_token, Preprocessor};

#[test]
fn stems_match_reference_implementation() {
    let table = include_str!("fixtures/porter_reference.tsv");
    let mut mismatches = Vec::new();
    let mut n = 0;
    for line in table.lines().filter(|l| !l.is_empty()) {
        let (word, expected) = line.split_once('\t').expect("word<TAB>stem");
        n += 1;
        let got = normalize_token(word);
        if got != expected {
            mismatches.push(format!("{word}: got {got}, want {expected}"));
        }
    }
    assert!(n > 2000, "reference table too small: {n}");
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}

#[test]
fn pipeline_order_is_tokenize_stopwords_stem() {
    let p = Preprocessor::default();
    assert_eq!(p.process("The Evacuations were ordered"), vec!["evacu", "order"]);
    // "was" is a stopword; its stem "wa" would not be.
    assert_eq!(p.process("was"), Vec::<String>::new());
}
