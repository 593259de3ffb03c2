//! Hand-labelled artifact strings for the substitution rules, written from
//! the rule definitions rather than from the implementation.

pub const ARTIFACT_ORACLE: &[(&str, &str)] = &[
    // IP: four decimal octets, each 0..=255
    ("192.168.0.1", "[IP]"),
    ("0.0.0.0", "[IP]"),
    ("255.255.255.255", "[IP]"),
    ("256.1.1.1", "256.1.1.1"),
    ("1.2.3.256", "1.2.3.256"),
    ("999.1.1.1", "999.1.1.1"),
    ("1.2.3", "1.2.3"),
    ("1.2.3.4.5", "1.2.3.4.5"),
    ("1.2.3.a", "1.2.3.a"),
    ("10.0.0.1,", "[IP],"),
    ("(8.8.8.8)", "([IP])"),
    // ADDRESS: 0x plus 4..=16 hex digits
    ("0x20000001", "[ADDRESS]"),
    ("0xdead", "[ADDRESS]"),
    ("0xabc", "0xabc"),
    ("0x0123456789abcdef", "[ADDRESS]"),
    ("0x0123456789abcdef0", "0x0123456789abcdef0"),
    ("0xG123", "0xG123"),
    // PATH: drive prefix or two or more separators; beats EXE and FILE
    (r"C:\Windows\copy.exe", "[PATH]"),
    (r"C:\", "[PATH]"),
    (r"c:\temp", "[PATH]"),
    ("/tmp/x/run.sh", "[PATH]"),
    ("/usr/bin", "[PATH]"),
    ("a/b/c", "[PATH]"),
    (r"%APPDATA%\Microsoft\svc.dll", "[PATH]"),
    (r"\\server\share", "[PATH]"),
    ("/etc", "/etc"),
    ("and/or", "and/or"),
    ("C:Windows", "C:Windows"),
    ("dir/file.txt", "[FILE]"),
    ("dir/copy.exe", "[EXE]"),
    // MALWARE: three or more alphanumeric segments, one of them a platform
    ("TrojanDropper.Win32.Agent.life", "[MALWARE]"),
    ("Backdoor.MSIL.Remcos", "[MALWARE]"),
    ("Trojan.W97M.Downloader", "[MALWARE]"),
    ("Worm.win64.x", "[MALWARE]"),
    ("Trojan.Android.Hiddad", "[MALWARE]"),
    ("Trojan.JS.Nemucod", "[MALWARE]"),
    ("Trojan.Win32.Agent.exe", "[MALWARE]"),
    ("Win32.Agent", "Win32.Agent"),
    ("Trojan.Generic.KD", "Trojan.Generic.KD"),
    ("Trojan-Spy.Win32.Zbot", "Trojan-Spy.Win32.Zbot"),
    // EXE
    ("copy.exe", "[EXE]"),
    ("SETUP.EXE", "[EXE]"),
    ("copy.exe.", "[EXE]."),
    ("copy.exes", "copy.exes"),
    ("exe", "exe"),
    // FILE
    ("readme.txt", "[FILE]"),
    ("run.bat", "[FILE]"),
    ("report.DOCX", "[FILE]"),
    ("payload.dll", "[FILE]"),
    ("invoice.pdf", "[FILE]"),
    ("script.ps1", "[FILE]"),
    ("notes.txt,", "[FILE],"),
    ("archive.tar", "archive.tar"),
    ("ver.1", "ver.1"),
];
