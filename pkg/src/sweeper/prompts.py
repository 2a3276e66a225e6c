"""Fixed prompt templates sent to the text and multimodal backends.

``${VQ}`` is replaced verbatim by the visual question. The multimodal answer
template is covered by a golden test and must not drift.
"""

QUESTION_TOKEN = "${VQ}"

MULTIMODAL_ANSWER_TEMPLATE = (
    "Given different views of a 3D model. Answer the question in one sentence. "
    "Question: ${VQ} The answer should be concise"
)

ENTITY_EXTRACTION_TEMPLATE = (
    "List the key visual entities of the question as a comma-separated list, "
    "most important first. Question: ${VQ}"
)

CLASSIFY_TEMPLATE = (
    "Decide whether the question asks for a count of objects. "
    "Reply with exactly one word, Counting or Other. Question: ${VQ}"
)

COMPARE_TEMPLATE = (
    "Here are answers describing different 3D models. Summarize what they share "
    "and how they differ. Reply with one line starting 'Similarities:' and one "
    "line starting 'Differences:'. Refer to models only by their index.\n"
    "${ANSWERS}"
)


def fill(template: str, question: str) -> str:
    return template.replace(QUESTION_TOKEN, question)


def fill_compare(answers: list[str]) -> str:
    lines = [f"Model {i + 1}: {a}" for i, a in enumerate(answers)]
    return COMPARE_TEMPLATE.replace("${ANSWERS}", "\n".join(lines))
