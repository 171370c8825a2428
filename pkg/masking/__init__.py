from .plan import MaskingError, MaskPlan, allocate_budget, full_plan, sample_mask_plan
from .tasks import select_task
from .text import SentenceSpans, mask_text_sentences, sentence_spans
