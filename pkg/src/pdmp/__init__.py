"""Planning with diffeomorphically morphed sampling distributions."""

__version__ = "0.1.0"
