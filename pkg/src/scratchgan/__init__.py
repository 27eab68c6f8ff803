"""Language GAN trained from scratch with dense discriminator rewards, plus
MLE and Kneser-Ney baselines and the evaluation metrics used to compare them."""

__version__ = "0.1.0"
