from typing import Optional


class IdeologyException(Exception):

    def __init__(self, error_message: Exception | str, error_detail: Optional[object] = None):
        super().__init__(error_message)
        if error_detail is not None and error_detail.exc_info()[2] is not None:
            self.error_message = IdeologyException.get_detailed_error_message(error_message=error_message,
                                                                              error_detail=error_detail
                                                                              )
        else:
            self.error_message = str(error_message)


    @staticmethod
    def get_detailed_error_message(error_message: Exception | str, error_detail) -> str:
        """
        error_message: Exception object
        error_detail: object of sys module
        """
        _, _, exec_tb = error_detail.exc_info()
        exception_block_line_number = exec_tb.tb_frame.f_lineno
        try_block_line_number = exec_tb.tb_lineno
        file_name = exec_tb.tb_frame.f_code.co_filename
        error_message = f"""
        Error occured in script: 
        [ {file_name} ] at 
        try block line number: [{try_block_line_number}] and exception block line number: [{exception_block_line_number}] 
        error message: [{error_message}]
        """
        return error_message

    def __str__(self):
        return self.error_message


    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.error_message!r})"


class ConfigurationError(IdeologyException):
    """Missing or invalid configuration, input columns, taxonomy or group definitions."""


class StageOrderingError(IdeologyException):
    """A pipeline stage ran before the artifacts it consumes were produced."""


class UndefinedAHPIError(IdeologyException):
    pass


class TaggingFailure(IdeologyException):
    pass


class TemplateError(IdeologyException):
    pass


class MissingLocalizedNameError(IdeologyException):
    pass


class StoreCorruptionError(IdeologyException):

    def __init__(self, path, offset: int, reason: str = ""):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"Corrupt record in {self.path} at byte offset {offset}: {reason}")


####################################################################################################################
                                        ## Provider failures ##
####################################################################################################################


class ProviderError(IdeologyException):
    outcome = "transport"
    transient = True

    def __init__(self, message: str, status_code: Optional[int] = None, body: Optional[str] = None):
        self.status_code = status_code
        self.body = body
        super().__init__(message)


class RateLimitedError(ProviderError):
    outcome = "rate_limited"


class TransportError(ProviderError):
    outcome = "transport"


class ContentFilteredError(ProviderError):
    outcome = "refusal"
    transient = False


class MalformedReplyError(ProviderError):
    outcome = "malformed"
    transient = False


