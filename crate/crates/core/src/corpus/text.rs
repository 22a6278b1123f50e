/// Lowercases, deletes ASCII punctuation and collapses whitespace.
///
/// The deleted set is exactly `char::is_ascii_punctuation`:
///
/// ```text
/// ! " # $ % & ' ( ) * + , - . / : ; < = > ? @ [ \ ] ^ _ ` { | } ~
/// ```
///
/// Characters are removed rather than replaced with a space, so `"it's"`
/// becomes `"its"` and `"2-PM"` becomes `"2pm"`.
pub fn normalize_transcript(text: &str) -> String {
    let cleaned: String = text.to_lowercase().chars().filter(|c| !c.is_ascii_punctuation()).collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        assert_eq!(normalize_transcript("Hello, World!"), "hello world");
        assert_eq!(normalize_transcript("already clean"), "already clean");
        assert_eq!(normalize_transcript("It's 2-PM."), "its 2pm");
        assert_eq!(normalize_transcript("  a \t b\n"), "a b");
        assert_eq!(normalize_transcript("?!"), "");
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,40}") {
            let once = normalize_transcript(&s);
            prop_assert_eq!(normalize_transcript(&once), once);
        }
    }
}
