//! The original Porter suffix-stripping stemmer.
//!
//! Rule lists are scanned in order and the first rule whose suffix matches
//! decides the step, whether or not its condition holds.

type Condition = fn(&[u8]) -> bool;

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

/// Consonant flags for every position. `y` is a consonant at the start of a
/// word or after a vowel.
fn consonant_flags(word: &[u8]) -> Vec<bool> {
    let mut flags: Vec<bool> = Vec::with_capacity(word.len());
    for (i, &c) in word.iter().enumerate() {
        let cons = if is_vowel(c) {
            false
        } else if c == b'y' {
            i == 0 || !flags[i - 1]
        } else {
            true
        };
        flags.push(cons);
    }
    flags
}

fn is_consonant(word: &[u8], i: usize) -> bool {
    consonant_flags(&word[..=i])[i]
}

/// Number of vowel-consonant transitions, the `m` of `[C](VC)^m[V]`.
fn measure(stem: &[u8]) -> usize {
    consonant_flags(stem)
        .windows(2)
        .filter(|w| !w[0] && w[1])
        .count()
}

fn contains_vowel(stem: &[u8]) -> bool {
    consonant_flags(stem).iter().any(|c| !c)
}

fn ends_double_consonant(word: &[u8]) -> bool {
    let n = word.len();
    n >= 2 && word[n - 1] == word[n - 2] && is_consonant(word, n - 1)
}

/// `*o`: ends consonant-vowel-consonant, last not w, x or y.
fn ends_cvc(word: &[u8]) -> bool {
    let n = word.len();
    if n < 3 {
        return false;
    }
    let flags = consonant_flags(word);
    flags[n - 3] && !flags[n - 2] && flags[n - 1] && !matches!(word[n - 1], b'w' | b'x' | b'y')
}

fn m_gt0(stem: &[u8]) -> bool {
    measure(stem) > 0
}

fn m_gt1(stem: &[u8]) -> bool {
    measure(stem) > 1
}

fn apply_rules(word: &mut Vec<u8>, rules: &[(&str, &str, Option<Condition>)]) {
    for (suffix, replacement, condition) in rules {
        let suffix = suffix.as_bytes();
        if word.ends_with(suffix) {
            let stem_len = word.len() - suffix.len();
            if condition.is_none_or(|c| c(&word[..stem_len])) {
                word.truncate(stem_len);
                word.extend_from_slice(replacement.as_bytes());
            }
            return;
        }
    }
}

fn step1a(word: &mut Vec<u8>) {
    apply_rules(
        word,
        &[("sses", "ss", None), ("ies", "i", None), ("ss", "ss", None), ("s", "", None)],
    );
}

fn step1b(word: &mut Vec<u8>) {
    if word.ends_with(b"eed") {
        let stem_len = word.len() - 3;
        if measure(&word[..stem_len]) > 0 {
            word.truncate(stem_len + 2);
        }
        return;
    }
    let mut stripped = false;
    for suffix in [&b"ed"[..], &b"ing"[..]] {
        if word.ends_with(suffix) && contains_vowel(&word[..word.len() - suffix.len()]) {
            word.truncate(word.len() - suffix.len());
            stripped = true;
            break;
        }
    }
    if !stripped {
        return;
    }
    for (suffix, replacement) in [("at", "ate"), ("bl", "ble"), ("iz", "ize")] {
        if word.ends_with(suffix.as_bytes()) {
            word.truncate(word.len() - suffix.len());
            word.extend_from_slice(replacement.as_bytes());
            return;
        }
    }
    if ends_double_consonant(word) {
        if !matches!(word.last(), Some(b'l' | b's' | b'z')) {
            word.pop();
        }
        return;
    }
    if measure(word) == 1 && ends_cvc(word) {
        word.push(b'e');
    }
}

fn step1c(word: &mut Vec<u8>) {
    apply_rules(word, &[("y", "i", Some(contains_vowel))]);
}

fn step2(word: &mut Vec<u8>) {
    let c = Some(m_gt0 as Condition);
    apply_rules(
        word,
        &[
            ("ational", "ate", c),
            ("tional", "tion", c),
            ("enci", "ence", c),
            ("anci", "ance", c),
            ("izer", "ize", c),
            ("abli", "able", c),
            ("alli", "al", c),
            ("entli", "ent", c),
            ("eli", "e", c),
            ("ousli", "ous", c),
            ("ization", "ize", c),
            ("ation", "ate", c),
            ("ator", "ate", c),
            ("alism", "al", c),
            ("iveness", "ive", c),
            ("fulness", "ful", c),
            ("ousness", "ous", c),
            ("aliti", "al", c),
            ("iviti", "ive", c),
            ("biliti", "ble", c),
        ],
    );
}

fn step3(word: &mut Vec<u8>) {
    let c = Some(m_gt0 as Condition);
    apply_rules(
        word,
        &[
            ("icate", "ic", c),
            ("ative", "", c),
            ("alize", "al", c),
            ("iciti", "ic", c),
            ("ical", "ic", c),
            ("ful", "", c),
            ("ness", "", c),
        ],
    );
}

fn ion_condition(stem: &[u8]) -> bool {
    measure(stem) > 1 && matches!(stem.last(), Some(b's' | b't'))
}

fn step4(word: &mut Vec<u8>) {
    let c = Some(m_gt1 as Condition);
    apply_rules(
        word,
        &[
            ("al", "", c),
            ("ance", "", c),
            ("ence", "", c),
            ("er", "", c),
            ("ic", "", c),
            ("able", "", c),
            ("ible", "", c),
            ("ant", "", c),
            ("ement", "", c),
            ("ment", "", c),
            ("ent", "", c),
            ("ion", "", Some(ion_condition)),
            ("ou", "", c),
            ("ism", "", c),
            ("ate", "", c),
            ("iti", "", c),
            ("ous", "", c),
            ("ive", "", c),
            ("ize", "", c),
        ],
    );
}

fn step5(word: &mut Vec<u8>) {
    if word.ends_with(b"e") {
        let stem = &word[..word.len() - 1];
        let m = measure(stem);
        if m > 1 || (m == 1 && !ends_cvc(stem)) {
            word.pop();
        }
    }
    if word.ends_with(b"ll") && measure(&word[..word.len() - 1]) > 1 {
        word.pop();
    }
}

/// Stems a lowercase word. Words containing non-ASCII characters are
/// returned unchanged.
pub fn stem(word: &str) -> String {
    if !word.is_ascii() || word.is_empty() {
        return word.to_string();
    }
    let mut w = word.as_bytes().to_vec();
    step1a(&mut w);
    step1b(&mut w);
    step1c(&mut w);
    step2(&mut w);
    step3(&mut w);
    step4(&mut w);
    step5(&mut w);
    // Only ASCII bytes were ever written.
    String::from_utf8(w).expect("ascii stem")
}
