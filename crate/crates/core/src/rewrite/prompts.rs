use super::{RewriteError, Topic};

const ROUND1_INSTRUCTION: &str = "I want to find images that meet the text requirements below. \
Please summarize in concise language the elements that must be present in the image. \
Unnecessary information and explanatory content cannot be output.";

const ROUND2_INSTRUCTION: &str = "Use a first-person perspective to simply describe what an image \
containing the following contents would look like if recorded by a GoPro. If not mentioned, do not \
include anyone other than the GoPro wearer in the image.";

const ROUND2_CONSTRAINTS: [&str; 5] = [
    "1. Do not use any qualifying or beautifying words.",
    "2. Do not exceed 30 words.",
    "3. Do not output information that is not in the content.",
    "4. If there is no background description in the content, do not add background information such as weather.",
    "5. Do not output GoPro.",
];

/// Description and narrative joined by a single space, skipping empty parts.
pub fn requirements(topic: &Topic) -> String {
    [topic.description.trim(), topic.narrative.trim()]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Summarization prompt over the topic's title and requirements.
pub fn build_round1_prompt(topic: &Topic) -> String {
    format!(
        "{ROUND1_INSTRUCTION}\n[Query]: {},\n[Requirements]: {}\n[Output]:",
        topic.title.trim(),
        requirements(topic)
    )
}

/// First-person description prompt over the round-1 summary.
pub fn build_round2_prompt(round1_output: &str) -> Result<String, RewriteError> {
    let content = round1_output.trim();
    if content.is_empty() {
        return Err(RewriteError::EmptyPromptInput);
    }
    Ok(format!(
        "{ROUND2_INSTRUCTION}\nThere are some other requirements:\n{}\n[Requirements]: {content}\n[Output]:",
        ROUND2_CONSTRAINTS.join("\n")
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewrite::tests::meals_topic;

    #[test]
    fn round1_for_meals_topic() {
        let p = build_round1_prompt(&meals_topic());
        assert!(p.starts_with(
            "I want to find images that meet the text requirements below. Please summarize in concise \
             language the elements that must be present in the image. Unnecessary information and \
             explanatory content cannot be output.\n"
        ));
        assert!(p.contains("[Query]: Photographing meals.,\n"));
        assert!(p.contains(
            "[Requirements]: Find all the times I take a photo of my meal. Each instance should involve \
             photographing a meal or plate of food, not just seeing or eating it. Taking a photo with a \
             camera or phone are required for any eating instance to be relevant.\n"
        ));
        assert!(p.ends_with("[Output]:"));
        assert_eq!(p, build_round1_prompt(&meals_topic()));
    }

    #[test]
    fn round1_empty_narrative() {
        let mut t = meals_topic();
        t.narrative.clear();
        let p = build_round1_prompt(&t);
        assert!(p.contains("[Requirements]: Find all the times I take a photo of my meal.\n"));
    }

    #[test]
    fn round2_embeds_round1_output() {
        let r1 =
            "Images must show instances of meals being photographed with a camera or phone, not just seen or eaten.";
        let p = build_round2_prompt(r1).unwrap();
        assert!(p.contains(&format!("[Requirements]: {r1}\n")));
        assert!(p.contains("2. Do not exceed 30 words."));
        assert!(p.contains("5. Do not output GoPro."));
        assert!(p.contains("There are some other requirements:\n1. Do not use any qualifying or beautifying words.\n"));
    }

    #[test]
    fn round2_rejects_blank() {
        assert!(matches!(
            build_round2_prompt(" \n\t"),
            Err(RewriteError::EmptyPromptInput)
        ));
    }
}
