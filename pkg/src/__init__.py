"""mTBI-BoW: bag-of-visual-words classification of mild traumatic brain injury."""

__version__ = "0.1.0"
