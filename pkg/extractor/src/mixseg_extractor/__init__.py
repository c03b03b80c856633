"""Frozen-encoder token embedding extractor for the mixseg file formats."""

from mixseg_extractor.extract import ExtractionResult, ExtractorConfig, extract
from mixseg_extractor.formats import read_dataset, write_embeddings

__version__ = "0.1.0"
