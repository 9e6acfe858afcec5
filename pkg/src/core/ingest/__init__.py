# Model zoo loading and the ATF activation format
