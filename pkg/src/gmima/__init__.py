"""Grand-model multiple imputation and block model averaging for survey logits."""

__version__ = "0.1.0"
