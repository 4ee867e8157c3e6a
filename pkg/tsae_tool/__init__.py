TOOL_NAME = "TS Adversarial Autoencoder"
__version__ = "1.0.0"
