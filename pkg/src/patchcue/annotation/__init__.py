from patchcue.annotation.prompts import (
    TEMPLATE_SHA256,
    TemplateIntegrityError,
    AnnotationResponseError,
    LabelParse,
    PromptRequest,
    build_extraction_prompt,
    build_grounding_prompt,
    build_reasoning_prompt,
    load_template,
    parse_bbox_response,
    parse_label_response,
)
from patchcue.annotation.transport import (
    HttpTransport,
    MockTransport,
    Transport,
    TransportError,
    ground_sample,
    run_annotation,
)

__all__ = [
    "TEMPLATE_SHA256",
    "TemplateIntegrityError",
    "AnnotationResponseError",
    "HttpTransport",
    "LabelParse",
    "MockTransport",
    "PromptRequest",
    "Transport",
    "TransportError",
    "build_extraction_prompt",
    "build_grounding_prompt",
    "build_reasoning_prompt",
    "ground_sample",
    "load_template",
    "parse_bbox_response",
    "parse_label_response",
    "run_annotation",
]
