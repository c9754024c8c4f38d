//! Question-generation prompt templates.
//!
//! Placeholders are `{name}`; literal braces in the JSON examples are plain
//! braces. Filling is single-pass, so values containing `{...}` are never
//! re-expanded.

pub const RELIABILITY: &str = r#"Given a DYK fact in JSON format containing 'text' and 'bold_entity' fields, generate a question. Your output should be a JSON object containing the question with its corresponding answer. Your response should follow these criteria:

1. The question should be answerable using only the information provided in the fact
2. The answer should be the bold_entity
3. The question should be clear, natural, and specific so that the answer can be easily identified (i.e., use as many details as possible from the fact)
4. The bold entity should not be mentioned in the question since it is the answer. But make sure that the question's answer is the bold entity.

Example:
Input:
{
   'text': 'that Margrit Waltz has ferried planes to points on five continents?',
   'bold_entity': 'Margrit Waltz',
}

Expected output:
{
    "question": {
        "text": "Who has ferried planes to points on five continents?",
        "answer": "Margrit Waltz"
    }
}

Now please generate a question with answer for this fact:
{test_example}"#;

pub const PARAPHRASE: &str = r#"Given a pair of question and answer, generate three different paraphrases of the question. Make sure the answer is the same as before. Your output should be a JSON object with a list of dictionaries under the key "paraphrases". Each dictionary should have a "question" key and an "answer" key. Here is the pair of question and answer:

Question: {question}
Answer: {answer}"#;

pub const GENERALITY: &str = r#"Given a pair of question and answer, generate three different alternative questions. Make sure the question asks about a different aspect of the same fact. Remember to follow the rules below:

1. The answer is one aspect of the fact (such as an entity / year / number etc.) apart from the original answer.
2. The answer should be concise and direct without any redundant words. And it shoud be a part of the fact.
3. The question should utilize all the information in the fact and be specific.
4. Do not use any information that is beyond the fact.
5. Your output should be a JSON object with a list of dictionaries under the key "alternatives". Each sub-dictionary should have a "question" key and an "answer" key.

Here is the pair of question and answer:

Fact: {fact}
Question: {question}
Answer: {answer}"#;

pub const ENTITY_DESCRIPTION: &str = r#"Replace the entity name with a description of it without mentioning the entity name. The description should be unique and specific. Make sure that you can infer the entity name using the description. You might also be provided with the wikipedia page of the entity. The output should be a JSON object with the following format:

{
    "description": "The description of the entity",
}

Wikipedia page: {page}
Entity name: {entity}"#;

pub const PORTABILITY: &str = r#"Below are a few examples of natural, scenario-based questions where a user describes a scenario and then asks a question:

Example 1:
Alternative description: "a historic European city known for its iconic architecture and cobblestone streets."
User's natural question: "I recently visited a charming European city famous for its unique architecture and quaint streets. Can you tell me about a famous monument there?"
Entity name: Paris

Example 2:
Alternative description: "a groundbreaking technology company that revolutionized communication with its innovative products."
User's natural question: "I've been reading about a tech company that changed how we communicate through its innovative gadgets. What product are they best known for?"
Entity name: Apple

Now, given the alternative description and the original question below, generate a new, natural, scenario-based question. The new question should describe a scenario without mentioning the original entity name and then ask the question in a natural, conversational manner.

Alternative description: {description}
Entity name: {entity}
Original question: {question}

The output should be a JSON object with the following format:

{
    "question": "The modified question"
}"#;

pub const LOCALITY: &str = r#"You'll generate a question-answer pair based on the description of an entity.

For each statement, you'll return a JSON object containing:
1. "question": The question that corresponds to the statement
2. "answer": The answer to the question

Example outputs:

1. Input: Jupiter is the largest planet in our solar system.
Output:
{
  "question": "What is the largest planet in our solar system?",
  "answer": "Jupiter"
}
2. Input: The capital of France is Paris.
Output:
{
  "question": "What is the capital of France?",
  "answer": "Paris"
}

Entity: {entity}
Description: {description}"#;

pub const TRAINING: &str = r#"Given a context, please generate related questions as comprehensively as possible with corresponding answers. The question has to be based on the context and the answer should be a short phrase.
This is an example:
Context: A small coastal town has a beach known for its colorful sea glass. The town hosts an annual festival celebrating this unique feature with art and conservation efforts.
Question: What attracts tourists to the small coastal town
annually? Answer: The unique sea glass beach.
Question: What is celebrated at the town's annual festival?
Answer: The natural phenomenon of sea glass.
Question: What type of activities are featured at the festival?

Format your output in a JSON object like the one below:
{
    "questions": [
        {
            "question": "What attracts tourists to the small coastal town annually?",
            "answer": "The unique sea glass beach."
        },
        {
            "question": "What is celebrated at the town's annual festival?",
            "answer": "The natural phenomenon of sea glass."
        },
        {
            "question": "What type of activities are featured at the festival?",
            "answer": "Art and conservation efforts."
        }
    ]
}
Context: {fact}"#;

/// Substitute `{name}` placeholders in one pass. Unknown `{...}` sequences
/// are copied through untouched.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let hit = values.iter().find_map(|(name, value)| {
            let token_len = name.len() + 2;
            (tail.len() >= token_len
                && tail[1..].starts_with(name)
                && tail.as_bytes()[token_len - 1] == b'}')
            .then_some((token_len, *value))
        });
        match hit {
            Some((len, value)) => {
                out.push_str(value);
                rest = &tail[len..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_is_single_pass() {
        let out = fill("Q: {question}\nA: {answer}", &[("question", "{answer}?"), ("answer", "x")]);
        assert_eq!(out, "Q: {answer}?\nA: x");
    }

    #[test]
    fn literal_braces_survive() {
        let out = fill(RELIABILITY, &[("test_example", "EX")]);
        assert!(out.contains("Expected output:\n{\n    \"question\": {"));
        assert!(out.ends_with("for this fact:\nEX"));
    }

    #[test]
    fn every_template_has_its_placeholders() {
        for (t, names) in [
            (RELIABILITY, &["test_example"][..]),
            (PARAPHRASE, &["question", "answer"]),
            (GENERALITY, &["fact", "question", "answer"]),
            (ENTITY_DESCRIPTION, &["page", "entity"]),
            (PORTABILITY, &["description", "entity", "question"]),
            (LOCALITY, &["entity", "description"]),
            (TRAINING, &["fact"]),
        ] {
            for n in names {
                assert!(t.contains(&format!("{{{n}}}")), "{n}");
            }
        }
        assert!(PARAPHRASE.contains("generate three different paraphrases of the question"));
        assert!(GENERALITY.contains("asks about a different aspect of the same fact"));
        assert!(TRAINING.contains("generate related questions as comprehensively as possible"));
        assert!(RELIABILITY.contains("2. The answer should be the bold_entity"));
    }
}
