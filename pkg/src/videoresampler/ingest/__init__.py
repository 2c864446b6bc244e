from .container import decode_video, encode_video, read_meta, read_video, write_video
from .curation import CaptionRecord, RuleSet, curate, filter_caption, parse_corpus, read_corpus
from .sampling import SampleSpec, VideoMeta, fps_sample, sample, uniform_sample

__all__ = [
    "CaptionRecord",
    "RuleSet",
    "SampleSpec",
    "VideoMeta",
    "curate",
    "decode_video",
    "encode_video",
    "filter_caption",
    "fps_sample",
    "parse_corpus",
    "read_corpus",
    "read_meta",
    "read_video",
    "sample",
    "uniform_sample",
    "write_video",
]
