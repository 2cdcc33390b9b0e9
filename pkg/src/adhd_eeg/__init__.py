"""ADHD detection from 19-channel EEG instance tables.

MAT ingestion, preprocessing, SMOTE balancing, a random forest and two
recurrent classifiers built on a small float64 autodiff kit, plus weighted
metrics and a reproducible command-line pipeline.
"""
__version__ = "0.1.0"
