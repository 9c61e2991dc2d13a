"""Small builders shared by the test modules."""

from telint.parser import parse_text

R_DIR_MACROS = "define(`r_dir_perms', `{ open getattr read search ioctl }')\n"
LOGD_RULE = "allow logd rootfs:dir { getattr create open read search ioctl };"

SOCKET_MACROS = """\
define(`unix_socket_connect', `
allow $1 $2_socket:sock_file write;
allow $1 $3:unix_stream_socket connectto;
')
"""
SOCKET_RULES = """\
allow a b_socket:sock_file write;
allow a c:unix_stream_socket connectto;
"""

DOMAIN_RULES = {
    154: "allow untrusted_app security_file:dir { getattr search };",
    104: "allow untrusted_app system_file:file execute;",
}


def policy(text: str, macros: str = "", path: str = "policy.te"):
    """Parse one file; undeclared names are tolerated so fixtures stay short."""
    return parse_text(text, macros, path=path, undeclared="warn")


def domain_text() -> str:
    lines = [""] * 154
    for line, rule in DOMAIN_RULES.items():
        lines[line - 1] = rule
    return "\n".join(lines) + "\n"
